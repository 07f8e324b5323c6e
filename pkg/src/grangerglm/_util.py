from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger("grangerglm")


def seed_sequence(seed) -> np.random.SeedSequence:
    """Normalize an int, SeedSequence, Generator or None into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


def spawn(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child streams, one per task index."""
    return seed_sequence(seed).spawn(n)


def parallel_map(func: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Map in task order; processes are used only when ``workers > 1``."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path=None, **kw) -> str:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, **kw)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
