"""Command-line entry point: ``grangerglm <command> [options]``.

Every command writes its outputs and a ``manifest.json`` under ``--out``.
Failures exit nonzero and print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._util import dump_json
from .bayes import ChainConfig, PriorSpec, run_chain, summarize_posterior
from .experiments import (
    ExperimentConfig,
    lag_scan_spec,
    run_lag_scan,
    run_pairwise,
    run_spike_slab_study,
    run_table1_study,
    run_table2_study,
    write_manifest,
)
from .mle import fit_mle, lr_granger_test, lr_scalar_test
from .model import PRESETS, BivariateSeries, ModelSpec, preset, simulate
from .signal import BANDS, RawRecording, align_pair, band_power_series, bin_spikes

log = logging.getLogger("grangerglm")


class CLIError(Exception):
    pass


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from exc


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


DEFAULT_PRESET = "poisson-gamma"


def _model_spec(args) -> ModelSpec:
    if getattr(args, "spec", None):
        return ModelSpec.from_dict(json.loads(_read_text(args.spec)))
    return preset(args.preset or DEFAULT_PRESET)[0]


def _load_data(path) -> BivariateSeries:
    return BivariateSeries.from_csv(_read_text(path))


def _config(args, kind: str, **over) -> ExperimentConfig:
    if getattr(args, "config", None):
        raw = json.loads(_read_text(args.config))
        # a manifest.json carries the full config of the run that wrote it
        if "config" in raw and "command" in raw:
            raw = raw["config"]
        cfg = ExperimentConfig.from_dict(raw).to_dict()
    else:
        cfg = {}
    cfg["kind"] = kind
    for key in ("preset", "replications", "seed", "iterations", "burn_in", "thinning",
                "k_max", "workers", "omega_rate"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "sample_sizes", None):
        cfg["sample_sizes"] = args.sample_sizes
    if getattr(args, "levels", None):
        cfg["levels"] = args.levels
    cfg["output_dir"] = str(args.out)
    cfg.update(over)
    return ExperimentConfig.from_dict(cfg)


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    over = {"sample_sizes": [args.n]} if args.n is not None else {}
    cfg = _config(args, "simulate", **over)
    if args.n is None and not args.config:
        cfg.sample_sizes = [1000]
    n = int(cfg.sample_sizes[0])
    spec, theta = cfg.model()
    data = simulate(spec, theta, n, burn_in=cfg.sim_burn_in, rng=np.random.default_rng(cfg.seed))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    data.to_csv(Path(args.out) / "series.csv")
    write_manifest(args.out, "simulate", cfg)


def cmd_preprocess(args):
    if args.sample_rate is None and args.sidecar is None:
        raise CLIError("give --sample-rate or a --sidecar JSON with sample_rate")
    fs = args.sample_rate or json.loads(_read_text(args.sidecar))["sample_rate"]
    rec = RawRecording.from_csv(_read_text(args.input), float(fs))
    band = BANDS[args.band]
    power = band_power_series(rec, band, args.window, args.analysis_len)
    counts = bin_spikes(rec, args.window)
    data = align_pair(power, counts)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    data.to_csv(Path(args.out) / "series.csv")
    cfg = ExperimentConfig(kind="preprocess", preset=None, output_dir=str(args.out))
    write_manifest(args.out, "preprocess", cfg, {
        "input": str(args.input), "input_sha256": _file_hash(args.input), "sample_rate": fs,
        "band": [band.name, band.lo, band.hi], "window_len": args.window,
        "analysis_len": args.analysis_len, "n": data.n})


def cmd_fit_mle(args):
    spec = _model_spec(args)
    fit = fit_mle(spec, _load_data(args.data))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    dump_json(fit.to_dict(spec), Path(args.out) / "fit.json")
    cfg = ExperimentConfig(kind="fit-mle", preset=args.preset, spec=spec.to_dict(),
                           theta=fit.theta_hat.to_dict(), output_dir=str(args.out))
    write_manifest(args.out, "fit-mle", cfg, {"data": str(args.data),
                                              "data_sha256": _file_hash(args.data)})


def cmd_lr_test(args):
    spec = _model_spec(args)
    data = _load_data(args.data)
    if args.target == "granger":
        rep = lr_granger_test(spec, data)
    else:
        rep = lr_scalar_test(spec, data, args.target)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    out = rep.to_dict(spec)
    out["target"] = args.target
    dump_json(out, Path(args.out) / "lr_test.json")
    cfg = ExperimentConfig(kind="fit-mle", preset=args.preset, spec=spec.to_dict(),
                           theta=rep.fit_alt.theta_hat.to_dict(), output_dir=str(args.out))
    write_manifest(args.out, "lr-test", cfg, {"data": str(args.data), "target": args.target,
                                              "data_sha256": _file_hash(args.data)})
    print(json.dumps({"lr_stat": rep.lr_stat, "df": rep.df, "p_value": rep.p_value}))


def cmd_fit_bayes(args):
    spec = _model_spec(args)
    if args.iterations <= args.burn_in:
        raise CLIError("iterations must exceed burn-in")
    cfg = _config(args, "fit-bayes")
    cc = ChainConfig(iterations=args.iterations, burn_in=args.burn_in, thinning=args.thinning,
                     k_max=args.k_max, spike_slab=args.spike_slab, seed=args.seed,
                     omega_rate=args.omega_rate)
    data = _load_data(args.data)
    smp = run_chain(spec, data, PriorSpec(), cc)
    summ = summarize_posterior(smp, smp.spec, data, ct=args.ct)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    smp.to_csv(out / "draws.csv")
    smp.to_json(out / "chain.json")
    dump_json(summ.to_dict(), out / "summary.json")
    write_manifest(args.out, "fit-bayes", cfg, {"data": str(args.data), "chain": cc.to_dict(),
                                                "spec": spec.to_dict(),
                                                "data_sha256": _file_hash(args.data)})


def cmd_lag_scan(args):
    cfg = _config(args, "lag-scan")
    data = _load_data(args.data)
    res = run_lag_scan(cfg, data)
    write_manifest(args.out, "lag-scan", cfg, {"data": str(args.data),
                                               "data_sha256": _file_hash(args.data)})
    print(json.dumps({"argmax_lag": res.argmax_lag,
                      "inclusion": [round(float(p), 4) for p in res.inclusion]}))


def cmd_pairwise(args):
    cfg = _config(args, "pairwise")
    rows = list(csv.DictReader(io.StringIO(_read_text(args.data))))
    if not rows:
        raise CLIError(f"{args.data}: no rows")
    labels = [c for c in rows[0] if c != "t"]
    series = [np.array([float(r[c]) for r in rows]) for c in labels]
    run_pairwise(cfg, series, labels)
    write_manifest(args.out, "pairwise", cfg, {"data": str(args.data),
                                               "data_sha256": _file_hash(args.data)})


def _study(kind, runner):
    def cmd(args):
        if args.seed is None and not args.config:
            raise CLIError("studies need --seed")
        cfg = _config(args, kind)
        if cfg.seed is None:
            raise CLIError("studies need a seed")
        res = runner(cfg)
        write_manifest(args.out, f"study-{kind}", cfg)
        if kind == "spike-slab":
            print(json.dumps({"median": [round(float(v), 4) for v in res.extra["median"]]}))
    return cmd


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grangerglm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def omega_flag(sp, default):
        sp.add_argument("--omega-rate", choices=("conjugate", "literal"), default=default,
                        help="omega full-conditional rule (default conjugate)")

    def common(sp, model=True, data=False):
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        if model:
            sp.add_argument("--preset", choices=sorted(PRESETS),
                            help=f"model preset (default {DEFAULT_PRESET})")
            sp.add_argument("--spec", help="ModelSpec JSON file (overrides --preset)")
        if data:
            sp.add_argument("--data", required=True, help="CSV with header t,y1,y2")

    sp = sub.add_parser("simulate", help="simulate a bivariate series")
    common(sp)
    sp.add_argument("--n", type=int, help="series length (default 1000)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("preprocess", help="band power and spike counts from a raw recording")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--input", required=True, help="CSV with header sample,lfp,spike")
    sp.add_argument("--sample-rate", type=float)
    sp.add_argument("--sidecar", help="JSON file with a sample_rate key")
    sp.add_argument("--band", choices=sorted(BANDS), default="beta")
    sp.add_argument("--window", type=int, default=30)
    sp.add_argument("--analysis-len", type=int,
                    help="short-time segment length per window (default: the window)")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("fit-mle", help="maximum-likelihood fit")
    common(sp, data=True)
    sp.set_defaults(func=cmd_fit_mle)

    sp = sub.add_parser("lr-test", help="likelihood-ratio Granger test")
    common(sp, data=True)
    sp.add_argument("--target", default="granger",
                    help="'granger' (gamma = 0 and rho = 0), 'rho' or 'gamma_<l>'")
    sp.set_defaults(func=cmd_lr_test)

    sp = sub.add_parser("fit-bayes", help="MCMC fit, optionally with spike-and-slab")
    common(sp, data=True)
    sp.add_argument("--iterations", type=int, default=11000)
    sp.add_argument("--burn-in", type=int, default=1000)
    sp.add_argument("--thinning", type=int, default=1)
    sp.add_argument("--k-max", type=int)
    sp.add_argument("--spike-slab", action="store_true")
    sp.add_argument("--ct", action="store_true", help="also summarize the c_t series")
    sp.add_argument("--seed", type=int)
    omega_flag(sp, "conjugate")
    sp.set_defaults(func=cmd_fit_bayes)

    sp = sub.add_parser("lag-scan", help="spike-and-slab scan over causal lags")
    common(sp, model=False, data=True)
    sp.add_argument("--k-max", type=int, default=15)
    sp.add_argument("--iterations", type=int, default=100000)
    sp.add_argument("--burn-in", type=int, default=10000)
    sp.add_argument("--thinning", type=int, default=1)
    sp.add_argument("--seed", type=int)
    omega_flag(sp, None)
    sp.set_defaults(func=cmd_lag_scan)

    sp = sub.add_parser("pairwise", help="pairwise LR tests between count series")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--data", required=True, help="CSV with a t column and one column per series")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_pairwise)

    studies = (("table1", run_table1_study, 500, "500 1000 2000"),
               ("table2", run_table2_study, 1000, "500 1000 2000"),
               ("spike-slab", run_spike_slab_study, 100, "1000"))
    for kind, runner, reps, sizes in studies:
        sp = sub.add_parser(f"study-{kind}", help=f"{kind} Monte Carlo study")
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--config", help="ExperimentConfig JSON file")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int, help=f"default {reps}")
        sp.add_argument("--sample-sizes", type=int, nargs="+", help=f"default {sizes}")
        sp.add_argument("--workers", type=int)
        if kind == "table2":
            sp.add_argument("--levels", type=float, nargs="+")
        if kind == "spike-slab":
            sp.add_argument("--k-max", type=int)
            sp.add_argument("--iterations", type=int)
            sp.add_argument("--burn-in", type=int)
            omega_flag(sp, None)
        sp.set_defaults(func=_study(kind, runner), _kind=kind, _reps=reps, _sizes=sizes)
    return p


_STUDY_PRESETS = {"table1": "poisson-gamma", "table2": "poisson-gamma-null",
                  "spike-slab": "poisson-gamma-bayes"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    kind = getattr(args, "_kind", None)
    if kind is not None and not args.config:
        # study defaults when no config file is given
        args.preset = args.preset or _STUDY_PRESETS[kind]
        args.replications = args.replications or args._reps
        args.sample_sizes = args.sample_sizes or [int(v) for v in args._sizes.split()]
    try:
        args.func(args)
    except (CLIError, ValueError, KeyError, ArithmeticError, RuntimeError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": args.command}) + "\n")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
