"""Posterior sampling by single-site Metropolis-Hastings within Gibbs.

Each sweep updates, in order, the series-1 block by MH, the prior inclusion
weight omega by a conjugate Beta draw, the lag-inclusion flags delta by
Gibbs, and the series-2 block by MH. Dispersions move on a log-normal
random walk. Proposal scales adapt during burn-in only.

Excluded lags (delta_l = 0) keep the last sampled gamma_l inside the chain;
stored draws record them as 0.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from . import _kernels as K
from ._util import dump_json, to_jsonable
from .expfam import coupling_h
from .mle import FitOptions, _Block, fit_mle
from .model import BivariateSeries, ModelSpec, ParamVector, Prepared

logger = logging.getLogger(__name__)


class ChainFailure(RuntimeError):
    """Too many iterations met a non-finite likelihood."""

    def __init__(self, message: str, fail_iterations: int, iterations: int):
        super().__init__(message)
        self.fail_iterations = fail_iterations
        self.iterations = iterations


class AdaptationWarning(UserWarning):
    pass


@dataclass
class PriorSpec:
    """Independent priors: N(0, tau2) for real coordinates, N(0, slab) for
    included gamma, N(0, phi_var) truncated to (0, inf) for dispersions, and
    omega ~ Beta(a, b)."""

    tau2: Union[float, Mapping[str, float]] = 100.0
    phi_var: float = 100.0
    slab_variance: float = 100.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        vals = list(self.tau2.values()) if isinstance(self.tau2, Mapping) else [self.tau2]
        for v in vals + [self.phi_var, self.slab_variance, self.a, self.b]:
            if not v > 0:
                raise ValueError("prior variances and Beta parameters must be positive")

    def block_variances(self, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for names in ParamVector.block_names(spec):
            v = np.empty(len(names))
            for i, n in enumerate(names):
                if n.startswith("phi"):
                    v[i] = self.phi_var
                elif n.startswith("gamma"):
                    v[i] = self.slab_variance
                elif isinstance(self.tau2, Mapping):
                    v[i] = float(self.tau2.get(n, 100.0))
                else:
                    v[i] = float(self.tau2)
            out.append(v)
        return out[0], out[1]


@dataclass
class ChainState:
    theta: ParamVector
    delta: np.ndarray
    omega: float
    scales1: np.ndarray
    scales2: np.ndarray
    acc1: np.ndarray = None
    att1: np.ndarray = None
    acc2: np.ndarray = None
    att2: np.ndarray = None
    iteration: int = 0
    burn_in: int = 0
    batch_index: int = 0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.int8).copy()
        self.scales1 = np.asarray(self.scales1, dtype=float).copy()
        self.scales2 = np.asarray(self.scales2, dtype=float).copy()
        for name, sc in (("acc1", self.scales1), ("att1", self.scales1),
                         ("acc2", self.scales2), ("att2", self.scales2)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(sc.size))
        if not 0.0 < self.omega < 1.0 and self.delta.size:
            raise ValueError("omega must lie in (0, 1)")
        if np.any(self.scales1 <= 0) or np.any(self.scales2 <= 0):
            raise ValueError("proposal scales must be positive")

    def acceptance_rates(self) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.acc1 / self.att1, self.acc2 / self.att2


def _frozen(spec: ModelSpec, fixed=()) -> tuple[np.ndarray, np.ndarray]:
    """Per-block flags for coordinates the sampler must not move."""
    m1, m2 = ParamVector.free_masks(spec)
    n1, n2 = ParamVector.block_names(spec)
    unknown = set(fixed) - set(n1) - set(n2)
    if unknown:
        raise KeyError(f"unknown parameter(s) to fix: {sorted(unknown)}")
    f1 = ~m1 | np.isin(n1, list(fixed))
    f2 = ~m2 | np.isin(n2, list(fixed))
    return f1.astype(np.int8), f2.astype(np.int8)


def _prep(spec, data, prepared):
    return prepared if prepared is not None else Prepared(spec, data)


def mh_update_theta1(state: ChainState, spec: ModelSpec, data: BivariateSeries,
                     priors: PriorSpec, rng, prepared: Optional[Prepared] = None,
                     fixed=()) -> ChainState:
    """One single-site MH sweep over the series-1 parameters (uses ell1 only).

    Names in ``fixed`` are held at their current value.
    """
    prep = _prep(spec, data, prepared)
    x1 = state.theta.block1()
    ll, _ = K.block_loglik(x1, prep.dims1, prep.series1, prep.no_delta)
    pvar1, _ = priors.block_variances(spec)
    K.mh_sweep(x1, prep.dims1, prep.series1, prep.no_delta, ll, _frozen(spec, fixed)[0],
               state.scales1, pvar1, False, state.acc1, state.att1, rng)
    state.theta = ParamVector.from_blocks(spec, x1, state.theta.block2())
    return state


def mh_update_theta2(state: ChainState, spec: ModelSpec, data: BivariateSeries,
                     priors: PriorSpec, rng, prepared: Optional[Prepared] = None,
                     spike_slab: bool = True, fixed=()) -> ChainState:
    """One single-site MH sweep over the series-2 parameters with the
    delta-masked recursion; gamma_l is skipped while delta_l = 0."""
    prep = _prep(spec, data, prepared)
    x2 = state.theta.block2()
    delta = prep.delta_array(state.delta)
    ll, _ = K.block_loglik(x2, prep.dims2, prep.series2, delta)
    _, pvar2 = priors.block_variances(spec)
    K.mh_sweep(x2, prep.dims2, prep.series2, delta, ll, _frozen(spec, fixed)[1],
               state.scales2, pvar2, spike_slab, state.acc2, state.att2, rng)
    state.theta = ParamVector.from_blocks(spec, state.theta.block1(), x2)
    return state


OMEGA_RATES = {"conjugate": K.OMEGA_CONJUGATE, "literal": K.OMEGA_LITERAL}


def _omega_mode(rate: str) -> int:
    try:
        return OMEGA_RATES[rate]
    except KeyError:
        raise ValueError(f"omega_rate must be one of {sorted(OMEGA_RATES)}") from None


def gibbs_update_omega(delta, a: float, b: float, rng, rate: str = "conjugate") -> float:
    """Draw omega from its full conditional given the inclusion flags.

    ``rate="conjugate"`` draws Beta(a + sum(delta), b + k_max - sum(delta)).
    ``rate="literal"`` draws Beta(a + sum(delta), b + sum(delta) + k_max),
    which is not the conjugate update but shrinks omega harder; it is kept
    for comparison with published inclusion results.
    """
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    return float(K.omega_draw(np.asarray(delta, dtype=np.int8), float(a), float(b), rng,
                              _omega_mode(rate)))


def delta_inclusion_probability(omega: float, ll_in: float, ll_out: float) -> float:
    """P(delta_l = 1 | rest) from the two toggled log-likelihoods."""
    return float(K.inclusion_probability(float(omega), float(ll_in), float(ll_out)))


def gibbs_update_delta(state: ChainState, spec: ModelSpec, data: BivariateSeries, rng,
                       prepared: Optional[Prepared] = None) -> ChainState:
    """Sequential Gibbs sweep over delta_1..delta_k at the current gamma."""
    if spec.k < 1:
        raise ValueError("delta update needs k_max >= 1")
    prep = _prep(spec, data, prepared)
    x2 = state.theta.block2()
    delta = prep.delta_array(state.delta)
    ll, _ = K.block_loglik(x2, prep.dims2, prep.series2, delta)
    _, nundef = K.delta_sweep(x2, prep.dims2, prep.series2, delta, ll, state.omega, rng)
    if nundef:
        warnings.warn(f"{nundef} delta update(s) skipped: both likelihoods vanish",
                      RuntimeWarning, stacklevel=2)
    state.delta = delta
    return state


def adapt_scales(state: ChainState, target: float = 0.44) -> ChainState:
    """Batch update log(scale) += (rate - target) / sqrt(batch index).

    Uses the tallies accumulated since the previous call and resets them.
    After burn-in the scales are frozen and the call is a no-op.
    """
    if state.iteration >= state.burn_in:
        warnings.warn("adaptation requested after burn-in; scales left unchanged",
                      AdaptationWarning, stacklevel=2)
        return state
    state.batch_index += 1
    K.adapt(state.scales1, state.acc1, state.att1, state.batch_index, target)
    K.adapt(state.scales2, state.acc2, state.att2, state.batch_index, target)
    for arr in (state.acc1, state.att1, state.acc2, state.att2):
        arr[:] = 0.0
    return state


# ---------------------------------------------------------------- samples

@dataclass
class PosteriorSamples:
    names: list
    draws: np.ndarray  # (stored iterations, parameters) in ParamVector.names order
    delta: np.ndarray  # (stored iterations, k_max)
    omega: np.ndarray
    burn_in: int
    thinning: int
    acceptance_rates: dict
    spec: Optional[ModelSpec] = None
    fail_iterations: int = 0
    scales: Optional[dict] = None
    nonfinite_proposals: int = 0

    def __len__(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.delta.shape[1]
        w.writerow(list(self.names) + [f"delta_{l}" for l in range(1, k + 1)] + ["omega"])
        for row, d, o in zip(self.draws, self.delta, self.omega):
            w.writerow([repr(float(v)) for v in row] + [int(v) for v in d] + [repr(float(o))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, burn_in: int = 0, thinning: int = 1,
                 spec: Optional[ModelSpec] = None) -> "PosteriorSamples":
        text = path_or_text
        if "\n" not in str(path_or_text):
            with open(path_or_text) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        dcols = [i for i, h in enumerate(header) if h.startswith("delta_")]
        pcols = [i for i, h in enumerate(header) if not h.startswith("delta_") and h != "omega"]
        return cls([header[i] for i in pcols], body[:, pcols],
                   body[:, dcols].astype(np.int8), body[:, header.index("omega")],
                   burn_in, thinning, {}, spec)

    def to_json(self, path=None) -> str:
        return dump_json({
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "names": self.names, "n_draws": len(self), "burn_in": self.burn_in,
            "thinning": self.thinning, "acceptance_rates": self.acceptance_rates,
            "fail_iterations": self.fail_iterations, "scales": self.scales,
            "nonfinite_proposals": self.nonfinite_proposals,
        }, path)


@dataclass
class ChainConfig:
    iterations: int = 11000
    burn_in: int = 1000
    thinning: int = 1
    k_max: Optional[int] = None
    spike_slab: bool = False
    seed: Optional[int] = None
    batch: int = 50
    target: float = 0.44
    max_fail_fraction: float = 0.01
    omega_rate: str = "conjugate"
    fixed: tuple = ()  # parameter names held at their starting values

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["fixed"] = list(self.fixed)
        return d


def _initial_scales(spec, prep, x1, x2, default=0.05):
    """2.4 times the conditional posterior SD implied by the Hessian diagonal."""
    out = []
    delta_all = prep.all_in
    for x, dims, series, delta in ((x1, prep.dims1, prep.series1, prep.no_delta),
                                   (x2, prep.dims2, prep.series2, delta_all)):
        free = np.ones(x.size, dtype=bool)
        blk = _Block(dims, series, delta, x, free, prep.n_scored)
        sc = np.full(x.size, default)
        try:
            H = blk.hessian(blk.pack(x))
            d = -np.diag(H)
            ok = np.isfinite(d) & (d > 0)
            sc[ok] = 2.4 / np.sqrt(d[ok])
        except (ArithmeticError, ValueError):
            pass
        out.append(np.clip(sc, 1e-6, 10.0))
    return out[0], out[1]


def initial_state(spec: ModelSpec, data: BivariateSeries, init: Optional[ParamVector] = None,
                  prepared: Optional[Prepared] = None, burn_in: int = 0) -> ChainState:
    """Start at the MLE (or ``init``) with all lags included and omega = 1/2."""
    prep = _prep(spec, data, prepared)
    if init is None:
        init = fit_mle(spec, data, options=FitOptions(std_errors=False), prepared=prep).theta_hat
    theta = init.copy()
    s1, s2 = _initial_scales(spec, prep, theta.block1(), theta.block2())
    return ChainState(theta, np.ones(spec.k, dtype=np.int8), 0.5, s1, s2, burn_in=burn_in)


def run_chain(spec: ModelSpec, data: BivariateSeries, priors: Optional[PriorSpec] = None,
              config: Optional[ChainConfig] = None, init: Optional[ParamVector] = None,
              state: Optional[ChainState] = None) -> PosteriorSamples:
    """Run one chain and return the stored post-burn-in draws.

    With ``config.spike_slab`` off, delta stays at all ones and the omega
    and delta steps are skipped. ``config.k_max`` overrides the spec's k.
    """
    cfg = config or ChainConfig()
    priors = priors or PriorSpec()
    if cfg.iterations <= cfg.burn_in:
        raise ValueError("iterations must exceed burn_in")
    if cfg.thinning < 1 or cfg.batch < 1:
        raise ValueError("thinning and batch must be positive")
    if cfg.k_max is not None and cfg.k_max != spec.k:
        spec = spec.with_orders(k=cfg.k_max)
        if init is not None and init.gamma.size != spec.k:
            g = np.zeros(spec.k)
            g[:min(spec.k, init.gamma.size)] = init.gamma[:spec.k]
            init = init.copy()
            init.gamma = g
    prep = Prepared(spec, data)
    st = state or initial_state(spec, data, init, prep, cfg.burn_in)
    rng = np.random.default_rng(cfg.seed)
    x1 = st.theta.block1()
    x2 = st.theta.block2()
    delta = prep.delta_array(st.delta)
    f1, f2 = _frozen(spec, cfg.fixed)
    pv1, pv2 = priors.block_variances(spec)
    s1 = st.scales1.copy()
    s2 = st.scales2.copy()
    (out1, out2, out_d, out_o, acc1, att1, acc2, att2, nfail, nonfinite,
     omega) = K.run_chain_kernel(
        x1, prep.dims1, prep.series1, x2, prep.dims2, prep.series2, delta, float(st.omega),
        f1, f2, s1, s2, pv1, pv2, bool(cfg.spike_slab), float(priors.a), float(priors.b),
        int(cfg.iterations), int(cfg.burn_in), int(cfg.thinning), int(cfg.batch),
        float(cfg.target), rng, _omega_mode(cfg.omega_rate))
    if nfail > cfg.max_fail_fraction * cfg.iterations:
        raise ChainFailure(f"{nfail} of {cfg.iterations} iterations ended at a non-finite "
                           f"likelihood (limit {cfg.max_fail_fraction:.0%})",
                           int(nfail), cfg.iterations)
    n1, n2 = ParamVector.block_names(spec)
    # reorder block columns to ParamVector.names order
    names = ParamVector.names(spec)
    full = np.hstack([out1, out2])
    cols = [(n1 + n2).index(n) for n in names]
    rates = {}
    for nm, a, t in zip(n1 + n2, np.concatenate([acc1, acc2]), np.concatenate([att1, att2])):
        if t > 0:
            rates[nm] = float(a / t)
    scales = dict(zip(n1 + n2, np.concatenate([s1, s2]).tolist()))
    return PosteriorSamples(names, full[:, cols], out_d, out_o, cfg.burn_in, cfg.thinning,
                            rates, spec, int(nfail), scales, int(nonfinite))


# -------------------------------------------------------------- summaries

@dataclass
class PosteriorSummary:
    table: dict  # name -> {mean, sd, ci_low, ci_high}
    inclusion: dict  # "delta_l" -> P(delta_l = 1)
    tail: dict  # name -> P(param < 0)
    ct: Optional[dict] = None

    def to_dict(self) -> dict:
        return to_jsonable({"table": self.table, "inclusion": self.inclusion,
                            "tail": self.tail, "ct": self.ct})


def compute_ct(samples: PosteriorSamples, spec: ModelSpec, data: BivariateSeries,
               chunk: int = 256) -> dict:
    """Joint contemporaneous-plus-lagged effect of series 1 on the series-2 mean.

    c_t = h_rho(y1_t) * exp(sum over included l of gamma_l * T1(y1_{t-l})),
    evaluated per draw and summarized over t = lag+1..n by posterior mean and
    equal-tailed 95% band, plus histogram data of the posterior-mean series.
    """
    prep = Prepared(spec, data)
    ty1 = prep.series1[1]
    y1 = prep.series1[0]
    l0 = spec.lag
    n = data.n
    rho = samples.column("rho") if "rho" in samples.names else np.zeros(len(samples))
    gam = (np.column_stack([samples.column(f"gamma_{l}") for l in range(1, spec.k + 1)])
           if spec.k else np.zeros((len(samples), 0)))
    gam = gam * (samples.delta[:, :spec.k] if spec.k else 1.0)
    mean = np.empty(n - l0)
    lo = np.empty(n - l0)
    hi = np.empty(n - l0)
    for c0 in range(l0, n, chunk):
        ts = np.arange(c0, min(n, c0 + chunk))
        log_lag = np.zeros((len(samples), ts.size))
        for l in range(1, spec.k + 1):
            log_lag += np.outer(gam[:, l - 1], ty1[ts - l])
        h = coupling_h(spec.coupling, 1.0, np.outer(rho, y1[ts]))
        c = h * np.exp(log_lag)
        mean[ts - l0] = c.mean(axis=0)
        lo[ts - l0], hi[ts - l0] = np.quantile(c, [0.025, 0.975], axis=0)
    counts, edges = np.histogram(mean, bins="auto")
    return {"t": np.arange(l0 + 1, n + 1), "mean": mean, "lower": lo, "upper": hi,
            "hist_counts": counts, "hist_edges": edges}


def summarize_posterior(samples: PosteriorSamples, spec: Optional[ModelSpec] = None,
                        data: Optional[BivariateSeries] = None, ct: bool = False) -> PosteriorSummary:
    if len(samples) == 0:
        raise ValueError("no stored draws")
    spec = spec or samples.spec
    table = {}
    tail = {}
    for j, name in enumerate(samples.names):
        col = samples.draws[:, j]
        lo, hi = np.quantile(col, [0.025, 0.975])
        table[name] = {"mean": float(col.mean()), "sd": float(col.std()),
                       "ci_low": float(lo), "ci_high": float(hi)}
        if name == "rho" or name.startswith("gamma"):
            tail[name] = float(np.mean(col < 0))
    inclusion = {f"delta_{l + 1}": float(samples.delta[:, l].mean())
                 for l in range(samples.delta.shape[1])}
    ct_out = None
    if ct:
        if spec is None or data is None:
            raise ValueError("c_t summary needs the spec and data")
        ct_out = compute_ct(samples, spec, data)
    return PosteriorSummary(table, inclusion, tail, ct_out)
