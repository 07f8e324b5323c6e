"""Monte Carlo studies, lag scans and pairwise analyses.

Every run is determined by an :class:`ExperimentConfig` and its seed.
Replication ``i`` draws from child stream ``i`` of the seed, so results do
not depend on the number of workers.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._util import dump_json, parallel_map, spawn, to_jsonable
from .bayes import ChainConfig, ChainFailure, PriorSpec, run_chain, summarize_posterior
from .expfam import FamilyKind, LinkKind
from .mle import FitOptions, fit_mle, lr_granger_test, lr_scalar_test
from .model import (
    DEFAULT_BURN_IN,
    BivariateSeries,
    ModelSpec,
    ParamVector,
    geometric_spec,
    poisson_gamma_spec,
    preset,
    simulate,
)

logger = logging.getLogger(__name__)

STUDY_KINDS = ("table1", "table2", "spike-slab", "fit-mle", "fit-bayes", "lag-scan",
               "pairwise", "preprocess", "simulate")


@dataclass
class ExperimentConfig:
    kind: str = "table1"
    preset: Optional[str] = "poisson-gamma"
    spec: Optional[dict] = None  # explicit ModelSpec.to_dict(); overrides preset
    theta: Optional[dict] = None  # explicit ParamVector.to_dict()
    replications: int = 500
    sample_sizes: list = field(default_factory=lambda: [500, 1000, 2000])
    seed: Optional[int] = None
    output_dir: Optional[str] = None
    levels: list = field(default_factory=lambda: [0.01, 0.05, 0.10])
    iterations: int = 11000
    burn_in: int = 1000
    thinning: int = 1
    k_max: Optional[int] = None
    sim_burn_in: int = DEFAULT_BURN_IN
    workers: int = 1
    omega_rate: str = "conjugate"

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}; expected one of {STUDY_KINDS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    def model(self) -> tuple[ModelSpec, ParamVector]:
        if self.spec is not None:
            spec = ModelSpec.from_dict(self.spec)
            if self.theta is None:
                raise ValueError("an explicit spec needs explicit theta")
            return spec, ParamVector.from_dict(self.theta)
        spec, theta = preset(self.preset)
        if self.theta is not None:
            theta = ParamVector.from_dict(self.theta)
        return spec, theta

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self, path=None) -> str:
        return dump_json(self.to_dict(), path)

    @classmethod
    def from_json(cls, path_or_text) -> "ExperimentConfig":
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        canon = json.dumps(to_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def chain_config(self, seed=None, spike_slab=False) -> ChainConfig:
        return ChainConfig(iterations=self.iterations, burn_in=self.burn_in,
                           thinning=self.thinning, k_max=self.k_max,
                           spike_slab=spike_slab, seed=seed, omega_rate=self.omega_rate)


def write_manifest(outdir, command: str, config: ExperimentConfig, extra=None) -> dict:
    man = {"command": command, "config": config.to_dict(), "config_hash": config.hash(),
           "seed": config.seed, "version": __version__}
    if extra:
        man.update(extra)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        dump_json(man, Path(outdir) / "manifest.json")
    return man


def _write_rows(path, header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if (isinstance(v, float) and np.isnan(v)) else v for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def _out(config, name):
    return None if config.output_dir is None else Path(config.output_dir) / name


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ------------------------------------------------------------------ table 1

def _table1_task(task):
    spec, theta, n, burn_in, ss = task
    try:
        data = simulate(spec, theta, n, burn_in=burn_in, rng=np.random.default_rng(ss))
        fit = fit_mle(spec, data, options=FitOptions(std_errors=False))
    except (ArithmeticError, ValueError) as exc:
        return None, False, repr(exc)
    return fit.theta_hat.to_vector(spec), fit.converged, ""


@dataclass
class StudyResult:
    rows: list
    header: list
    extra: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        return _write_rows(path, self.header, self.rows)

    def frame(self) -> dict:
        """Columns as a dict of lists."""
        return {h: [r[i] for r in self.rows] for i, h in enumerate(self.header)}


def run_table1_study(config: ExperimentConfig) -> StudyResult:
    """Mean MLE and empirical SE per parameter and sample size.

    Replications whose simulation or fit raised are excluded and counted.
    Fits that stop without meeting the gradient tolerance are kept (their
    best point is the estimate) and counted in ``n_nonconverged``.
    """
    spec, theta = config.model()
    names = ParamVector.names(spec)
    truth = theta.to_vector(spec)
    rows, long_rows = [], []
    for n in config.sample_sizes:
        tasks = [(spec, theta, int(n), config.sim_burn_in, ss)
                 for ss in spawn(np.random.SeedSequence([config.seed or 0, int(n)]),
                                 config.replications)]
        res = parallel_map(_table1_task, tasks, config.workers)
        est = np.array([r[0] for r in res if r[0] is not None]).reshape(-1, len(names))
        n_failed = sum(r[0] is None for r in res)
        n_nc = sum((r[0] is not None) and not r[1] for r in res)
        if n_failed:
            logger.warning("n=%d: %d replications failed and were excluded", n, n_failed)
        mean = est.mean(axis=0) if len(est) else np.full(len(names), np.nan)
        se = est.std(axis=0, ddof=1) if len(est) > 1 else np.full(len(names), np.nan)
        for j, name in enumerate(names):
            rows.append([name, float(truth[j]), int(n), float(mean[j]), float(se[j]),
                         len(est), n_failed, n_nc])
        for rep, e in enumerate(est):
            for j, name in enumerate(names):
                long_rows.append([int(n), rep, name, float(e[j])])
    header = ["parameter", "true", "n", "mean", "emp_se", "n_success", "n_failed",
              "n_nonconverged"]
    result = StudyResult(rows, header, {"estimates": long_rows})
    if config.output_dir is not None:
        result.to_csv(_out(config, "table1.csv"))
        _write_rows(_out(config, "table1_estimates.csv"), ["n", "rep", "parameter", "estimate"],
                    long_rows)
    return result


# ------------------------------------------------------------------ table 2

def _table2_task(task):
    spec, theta, n, burn_in, ss = task
    try:
        data = simulate(spec, theta, n, burn_in=burn_in, rng=np.random.default_rng(ss))
        rep = lr_granger_test(spec, data)
    except (ArithmeticError, ValueError) as exc:
        return None
    return rep.p_value, rep.lr_stat, rep.lr_raw, rep.fit_null.converged and rep.fit_alt.converged


def run_table2_study(config: ExperimentConfig) -> StudyResult:
    """Empirical size of the LR Granger test under the null."""
    for a in config.levels:
        if not 0 < a < 1:
            raise ValueError(f"nominal level must lie in (0, 1), got {a}")
    spec, theta = config.model()
    if np.any(theta.gamma != 0) or theta.rho != 0:
        raise ValueError("table2 study needs a null model (gamma = 0, rho = 0)")
    rows = []
    lr_min = {}
    pvals = {}
    for n in config.sample_sizes:
        tasks = [(spec, theta, int(n), config.sim_burn_in, ss)
                 for ss in spawn(np.random.SeedSequence([config.seed or 0, int(n)]),
                                 config.replications)]
        res = parallel_map(_table2_task, tasks, config.workers)
        ok = [r for r in res if r is not None]
        p = np.array([r[0] for r in ok])
        pvals[int(n)] = p
        lr_min[int(n)] = (min(r[1] for r in ok), min(r[2] for r in ok)) if ok else (np.nan,) * 2
        n_nc = sum(not r[3] for r in ok)
        for a in config.levels:
            rate = float(np.mean(p < a)) if p.size else float("nan")
            se = float(np.sqrt(a * (1 - a) / max(p.size, 1)))
            rows.append([int(n), float(a), rate, se, len(ok), len(res) - len(ok), n_nc])
    header = ["n", "level", "rejection_rate", "binomial_se", "n_success", "n_failed",
              "n_nonconverged"]
    result = StudyResult(rows, header, {"lr_min": lr_min, "p_values": pvals})
    if config.output_dir is not None:
        result.to_csv(_out(config, "table2.csv"))
    return result


# --------------------------------------------------------------- spike-slab

def _spike_slab_task(task):
    spec, theta, n, burn_in, chain_cfg, ss = task
    rng = np.random.default_rng(ss)
    try:
        data = simulate(spec, theta, n, burn_in=burn_in, rng=rng)
        chain_cfg = ChainConfig(**{**chain_cfg.to_dict(), "seed": _int_seed(ss.spawn(1)[0])})
        smp = run_chain(spec, data, config=chain_cfg)
    except (ArithmeticError, ValueError, ChainFailure) as exc:
        return None, repr(exc)
    return smp.delta.mean(axis=0), smp.acceptance_rates


def run_spike_slab_study(config: ExperimentConfig) -> StudyResult:
    """Posterior inclusion probabilities per simulated dataset."""
    spec, theta = config.model()
    k_max = config.k_max if config.k_max is not None else 5
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    n = int(config.sample_sizes[0])
    chain_cfg = ChainConfig(iterations=config.iterations, burn_in=config.burn_in,
                            thinning=config.thinning, k_max=k_max, spike_slab=True,
                            omega_rate=config.omega_rate)
    tasks = [(spec, theta, n, config.sim_burn_in, chain_cfg, ss)
             for ss in spawn(config.seed, config.replications)]
    res = parallel_map(_spike_slab_task, tasks, config.workers)
    rows, rates = [], []
    for rep, (probs, info) in enumerate(res):
        if probs is None:
            logger.warning("replication %d: chain aborted (%s)", rep, info)
            rows.append([rep, 1] + [float("nan")] * k_max)
        else:
            rows.append([rep, 0] + [float(v) for v in probs])
            rates.append(info)
    header = ["rep", "failed"] + [f"delta_{l}" for l in range(1, k_max + 1)]
    P = np.array([r[2:] for r in rows if not r[1]], dtype=float).reshape(-1, k_max)
    extra = {"median": np.median(P, axis=0) if len(P) else np.full(k_max, np.nan),
             "n_success": len(P), "n_failed": len(rows) - len(P), "acceptance": rates}
    result = StudyResult(rows, header, extra)
    if config.output_dir is not None:
        result.to_csv(_out(config, "spike_slab.csv"))
        dump_json({"median": extra["median"], "n_success": extra["n_success"],
                   "n_failed": extra["n_failed"]}, _out(config, "spike_slab_summary.json"))
    return result


# ------------------------------------------------------------------ lag scan

def lag_scan_spec(k_max: int, family1=FamilyKind.GAMMA, family2=FamilyKind.POISSON) -> ModelSpec:
    """First-order margins with a k_max-lag causal block (LFP power -> spikes)."""
    link1 = LinkKind.log() if family1 is FamilyKind.GAMMA else LinkKind.log1p()
    return ModelSpec(family1, family2, link1, LinkKind.log1p(), None, 1, 1, 1, 1, k_max)


@dataclass
class LagScanResult:
    inclusion: np.ndarray  # P(delta_k = 1), k = 1..k_max
    summary: dict
    ct: Optional[dict]
    samples: object = None

    @property
    def argmax_lag(self) -> int:
        return int(np.argmax(self.inclusion)) + 1


def run_lag_scan(config: ExperimentConfig, data: BivariateSeries,
                 spec: Optional[ModelSpec] = None, ct: bool = True) -> LagScanResult:
    """Spike-and-slab scan of causal lags 1..k_max."""
    k_max = config.k_max if config.k_max is not None else 15
    if k_max < 1:
        raise ValueError("k_max must be at least 1 for a lag scan")
    spec = (spec or lag_scan_spec(k_max)).with_orders(k=k_max)
    try:
        data.check(spec)
    except ValueError as exc:
        raise ValueError(f"data do not match the model families: {exc}") from exc
    cfg = ChainConfig(iterations=config.iterations, burn_in=config.burn_in,
                      thinning=config.thinning, spike_slab=True, seed=config.seed,
                      omega_rate=config.omega_rate)
    smp = run_chain(spec, data, config=cfg)
    summ = summarize_posterior(smp, spec, data, ct=ct)
    inc = np.array([summ.inclusion[f"delta_{l}"] for l in range(1, k_max + 1)])
    out = LagScanResult(inc, summ.to_dict(), summ.ct, smp)
    if config.output_dir is not None:
        _write_rows(_out(config, "lag_inclusion.csv"), ["lag", "p_include"],
                    [[l + 1, float(p)] for l, p in enumerate(inc)])
        _write_rows(_out(config, "posterior_summary.csv"),
                    ["parameter", "mean", "sd", "ci_low", "ci_high"],
                    [[k, v["mean"], v["sd"], v["ci_low"], v["ci_high"]]
                     for k, v in summ.table.items()])
        dump_json({"tail": summ.tail, "inclusion": summ.inclusion,
                   "acceptance_rates": smp.acceptance_rates}, _out(config, "lag_scan.json"))
        if summ.ct is not None:
            c = summ.ct
            _write_rows(_out(config, "ct_series.csv"), ["t", "mean", "lower", "upper"],
                        zip(c["t"].tolist(), c["mean"].tolist(), c["lower"].tolist(),
                            c["upper"].tolist()))
            _write_rows(_out(config, "ct_histogram.csv"), ["left", "right", "count"],
                        zip(c["hist_edges"][:-1].tolist(), c["hist_edges"][1:].tolist(),
                            c["hist_counts"].tolist()))
    return out


# ------------------------------------------------------------------ pairwise

@dataclass
class PairwiseReport:
    labels: list
    p_rho: np.ndarray  # [effect, cause]
    p_gamma: np.ndarray
    lr_rho: np.ndarray
    lr_gamma: np.ndarray
    reports: dict  # (cause, effect) -> {"rho": TestReport, "gamma_1": TestReport}

    def edges(self, test: str = "gamma_1", alpha: Optional[float] = None) -> list:
        """Directed edges (cause, effect, LR, p, triangle) for one test."""
        P = self.p_gamma if test == "gamma_1" else self.p_rho
        L = self.lr_gamma if test == "gamma_1" else self.lr_rho
        out = []
        for i, eff in enumerate(self.labels):
            for j, cause in enumerate(self.labels):
                if i == j or np.isnan(P[i, j]):
                    continue
                if alpha is not None and P[i, j] >= alpha:
                    continue
                out.append((cause, eff, float(L[i, j]), float(P[i, j]),
                            "upper" if j > i else "lower"))
        return out


def _pair_task(task):
    spec, y_cause, y_effect, i, j = task
    data = BivariateSeries(y_cause, y_effect)
    out = {}
    try:
        out["rho"] = lr_scalar_test(spec, data, "rho")
        # lag-one test with the contemporaneous term free in both fits
        out["gamma_1"] = lr_scalar_test(spec, data, "gamma_1")
    except (ArithmeticError, ValueError) as exc:
        return i, j, None
    return i, j, out


def run_pairwise(config: ExperimentConfig, series: Sequence, labels: Optional[Sequence] = None,
                 spec: Optional[ModelSpec] = None) -> PairwiseReport:
    """LR tests of synchrony (rho) and lag-one causality for every ordered pair.

    Cell ``[r, c]`` holds the test of series ``c`` causing series ``r``.
    """
    ys = [np.asarray(getattr(s, "values", s), dtype=float) for s in series]
    m = len(ys)
    if m < 2:
        raise ValueError("pairwise analysis needs at least two series")
    for i, y in enumerate(ys):
        if not np.all(FamilyKind.GEOMETRIC.in_support(y)):
            raise ValueError(f"series {i} is not a count series")
    n = min(len(y) for y in ys)
    ys = [y[:n] for y in ys]
    labels = list(labels) if labels is not None else [f"s{i + 1}" for i in range(m)]
    spec = spec or geometric_spec(k=1)
    tasks = [(spec, ys[j], ys[i], i, j) for i in range(m) for j in range(m) if i != j]
    res = parallel_map(_pair_task, tasks, config.workers)
    shape = (m, m)
    p_rho, p_gam, lr_rho, lr_gam = (np.full(shape, np.nan) for _ in range(4))
    reports = {}
    for i, j, out in res:
        if out is None:
            logger.warning("pair %s -> %s failed", labels[j], labels[i])
            continue
        p_rho[i, j] = out["rho"].p_value
        lr_rho[i, j] = out["rho"].lr_stat
        p_gam[i, j] = out["gamma_1"].p_value
        lr_gam[i, j] = out["gamma_1"].lr_stat
        reports[(labels[j], labels[i])] = out
    rep = PairwiseReport(labels, p_rho, p_gam, lr_rho, lr_gam, reports)
    if config.output_dir is not None:
        for name, M in (("pvalues_rho", p_rho), ("pvalues_gamma1", p_gam),
                        ("lr_rho", lr_rho), ("lr_gamma1", lr_gam)):
            _write_rows(_out(config, f"{name}.csv"), ["effect\\cause"] + labels,
                        [[labels[i]] + [float(v) for v in M[i]] for i in range(m)])
        for test in ("rho", "gamma_1"):
            _write_rows(_out(config, f"edges_{test}.csv"),
                        ["cause", "effect", "lr", "p_value", "triangle"], rep.edges(test))
    return rep
