"""Maximum likelihood, likelihood-ratio Granger tests and bootstrap inclusion.

The log-likelihood splits into a term for series 1 and a term for series 2
with disjoint parameters, so each block is maximized on its own. Both use
BFGS on the analytic score (dispersions optimized on the log scale), with a
Nelder-Mead restart when BFGS stalls away from a stationary point.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import optimize, stats

from . import _kernels as K
from ._util import parallel_map, spawn, to_jsonable
from .expfam import FamilyKind, LinkTag
from .model import (
    BivariateSeries,
    ModelSpec,
    ParamVector,
    Prepared,
    log_likelihood,
    simulate,
    DEFAULT_BURN_IN,
)

logger = logging.getLogger(__name__)

SMALL_SAMPLE_WARNING = (
    "n < 1000: the chi-square approximation to the LR statistic was found "
    "unreliable at n = 500 (empirical size well above nominal)")
LR_DEFECT_TOL = 1e-4
_PENALTY = 1e10


@dataclass
class FitOptions:
    gtol: float = 1e-7  # on the per-observation score
    maxiter: int = 1000
    std_errors: bool = True
    max_condition: float = 1e12
    restarts: int = 1


@dataclass
class FitResult:
    theta_hat: ParamVector
    loglik: float
    converged: bool
    iterations: int
    std_errors: Optional[dict] = None  # name -> SE, estimated parameters only
    hessian_condition: Optional[float] = None
    ell1: float = float("nan")
    ell2: float = float("nan")
    fixed: tuple = ()
    warnings: list = field(default_factory=list)

    def se_vector(self, spec: ModelSpec) -> np.ndarray:
        names = ParamVector.names(spec)
        se = self.std_errors or {}
        return np.array([se.get(n, np.nan) for n in names])

    def to_dict(self, spec: ModelSpec) -> dict:
        names = ParamVector.names(spec)
        return to_jsonable({
            "spec": spec.to_dict(),
            "theta_hat": dict(zip(names, self.theta_hat.to_vector(spec))),
            "loglik": self.loglik,
            "ell1": self.ell1,
            "ell2": self.ell2,
            "converged": self.converged,
            "iterations": self.iterations,
            "std_errors": self.std_errors,
            "hessian_condition": self.hessian_condition,
            "fixed": list(self.fixed),
            "warnings": self.warnings,
        })


@dataclass
class TestReport:
    lr_stat: float
    df: int
    p_value: float
    fit_null: FitResult
    fit_alt: FitResult
    direction: tuple = ("y1", "y2")
    lr_raw: float = 0.0
    warnings: list = field(default_factory=list)

    def to_dict(self, spec: ModelSpec) -> dict:
        return to_jsonable({
            "spec": spec.to_dict(),
            "direction": list(self.direction),
            "lr_stat": self.lr_stat,
            "lr_raw": self.lr_raw,
            "df": self.df,
            "p_value": self.p_value,
            "theta_hat": self.fit_alt.to_dict(spec)["theta_hat"],
            "theta_hat_null": self.fit_null.to_dict(spec)["theta_hat"],
            "loglik": self.fit_alt.loglik,
            "loglik_null": self.fit_null.loglik,
            "converged": [self.fit_null.converged, self.fit_alt.converged],
            "warnings": self.warnings,
        })


# ------------------------------------------------------------ initialization

def _link(tag: LinkTag, v: float) -> float:
    if tag is LinkTag.LOG:
        return math.log(max(v, 1e-8))
    if tag is LinkTag.LOGIT:
        v = min(max(v, 1e-4), 1 - 1e-4)
        return math.log(v / (1 - v))
    return v


def default_init(spec: ModelSpec, data: BivariateSeries,
                 prepared: Optional[Prepared] = None) -> ParamVector:
    """Stationary-mean-matched intercepts, 0.1 for beta/alpha, 0 for gamma and rho."""
    prep = prepared or Prepared(spec, data)
    l = spec.lag

    def block(fam: FamilyKind, tag, series, nb, na):
        y = series[0][l:]
        ty = series[1][l:]
        beta = np.full(nb + 1, 0.1)
        alpha = np.full(na, 0.1)
        nubar = _link(tag, float(np.mean(y)))
        tbar = float(np.mean(ty[np.isfinite(ty)])) if np.isfinite(ty).any() else 0.0
        beta[0] = nubar * (1 - alpha.sum()) - beta[1:].sum() * tbar
        if fam is FamilyKind.GAUSSIAN:
            phi = max(float(np.var(y)), 1e-6)
        elif fam is FamilyKind.GAMMA:
            phi = max(float(np.var(y) / np.mean(y) ** 2), 1e-3)
        else:
            phi = 1.0
        return beta, alpha, phi

    b1, a1, phi1 = block(spec.family1, spec.link1.tag, prep.series1, spec.r, spec.s)
    b2, a2, phi2 = block(spec.family2, spec.link2.tag, prep.series2, spec.p, spec.q)
    return ParamVector(b1, a1, b2, a2, np.zeros(spec.k), 0.0, phi1, phi2)


# ------------------------------------------------------------- optimization

@dataclass
class _BlockFit:
    x: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    cov: Optional[np.ndarray]  # over free coordinates, log scale for phi
    condition: Optional[float]
    message: str = ""


class _Block:
    """Objective over the free coordinates of one block (phi on log scale)."""

    def __init__(self, dims, series, delta, x0, free, n_scored):
        self.dims = dims
        self.series = series
        self.delta = delta
        self.x0 = np.asarray(x0, dtype=float).copy()
        self.free = np.flatnonzero(free)
        self.disp = self.x0.size - 1
        self.scale = 1.0 / max(n_scored, 1)

    def unpack(self, z):
        x = self.x0.copy()
        x[self.free] = z
        if self.disp in self.free:
            x[self.disp] = math.exp(min(max(z[-1], -700.0), 700.0))
        return x

    def pack(self, x):
        z = np.asarray(x, dtype=float)[self.free].copy()
        if self.disp in self.free:
            z[-1] = math.log(z[-1])
        return z

    def loglik_grad(self, z):
        x = self.unpack(z)
        ll, g, bad = K.block_loglik_grad(x, self.dims, self.series, self.delta)
        return ll, g[self.free]

    def objective(self, z):
        ll, g = self.loglik_grad(z)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            return _PENALTY, np.zeros_like(z)
        return -ll * self.scale, -g * self.scale

    def value(self, z):
        return self.objective(z)[0]

    def hessian(self, z, h=1e-5):
        """Central differences of the analytic score (total, not scaled)."""
        d = z.size
        H = np.empty((d, d))
        for i in range(d):
            step = h * max(1.0, abs(z[i]))
            zp = z.copy()
            zm = z.copy()
            zp[i] += step
            zm[i] -= step
            H[:, i] = (self.loglik_grad(zp)[1] - self.loglik_grad(zm)[1]) / (2 * step)
        return 0.5 * (H + H.T)


def _optimize_block(block: _Block, opts: FitOptions) -> _BlockFit:
    z0 = block.pack(block.x0)
    if z0.size == 0:
        ll, _ = block.loglik_grad(z0)
        return _BlockFit(block.x0.copy(), ll, np.isfinite(ll), 0, np.zeros((0, 0)), 1.0)
    best_z, best_f = z0, block.value(z0)
    iterations = 0
    converged = False
    message = ""
    z = z0
    for attempt in range(1 + opts.restarts):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(block.objective, z, jac=True, method="BFGS",
                                    options={"gtol": opts.gtol, "maxiter": opts.maxiter})
        iterations += int(res.nit)
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
        gnorm = float(np.max(np.abs(block.objective(best_z)[1])))
        message = str(res.message)
        if best_f < _PENALTY and gnorm < 1e-4:
            converged = True
            break
        # simplex restart from the best point, then quasi-Newton again
        nm = optimize.minimize(block.value, best_z, method="Nelder-Mead",
                               options={"maxiter": 400 * best_z.size, "xatol": 1e-8,
                                        "fatol": 1e-12, "adaptive": True})
        iterations += int(nm.nit)
        if nm.fun < best_f:
            best_z, best_f = nm.x, nm.fun
        z = best_z
    ll, _ = block.loglik_grad(best_z)
    cov = cond = None
    if opts.std_errors and converged:
        H = block.hessian(best_z)
        try:
            eig = np.linalg.eigvalsh(-H)
            cond = float(eig.max() / eig.min()) if eig.min() > 0 else float("inf")
            if eig.min() > 0 and cond < opts.max_condition:
                cov = np.linalg.inv(-H)
        except np.linalg.LinAlgError:
            cond = float("inf")
    return _BlockFit(block.unpack(best_z), float(ll), converged, iterations, cov, cond, message)


def _resolve_fixed(spec: ModelSpec, fixed_mask) -> tuple[np.ndarray, np.ndarray]:
    """Translate a name->bool mapping or array over the free layout to block masks."""
    n1, n2 = ParamVector.block_names(spec)
    f1 = np.zeros(len(n1), dtype=bool)
    f2 = np.zeros(len(n2), dtype=bool)
    if fixed_mask is None:
        return f1, f2
    if isinstance(fixed_mask, Mapping):
        unknown = set(fixed_mask) - set(n1) - set(n2)
        if unknown:
            raise KeyError(f"unknown parameter(s) in fixed_mask: {sorted(unknown)}")
        for i, n in enumerate(n1):
            f1[i] = bool(fixed_mask.get(n, False))
        for i, n in enumerate(n2):
            f2[i] = bool(fixed_mask.get(n, False))
        return f1, f2
    arr = np.asarray(fixed_mask, dtype=bool)
    m1, m2 = ParamVector.free_masks(spec)
    if arr.size != m1.sum() + m2.sum():
        raise ValueError("fixed_mask length must match the free-parameter layout")
    f1[np.flatnonzero(m1)] = arr[:m1.sum()]
    f2[np.flatnonzero(m2)] = arr[m1.sum():]
    return f1, f2


def _assemble(spec, prep, fit1: _BlockFit, fit2: _BlockFit, free1, free2) -> FitResult:
    theta = ParamVector.from_blocks(spec, fit1.x, fit2.x)
    ll = log_likelihood(spec, theta, prep.data, prepared=prep)
    n1, n2 = ParamVector.block_names(spec)
    se = None
    warn = []
    if fit1.cov is not None and fit2.cov is not None:
        se = {}
        for names, free, fit in ((n1, free1, fit1), (n2, free2, fit2)):
            idx = np.flatnonzero(free)
            sd = np.sqrt(np.diag(fit.cov))
            for j, i in enumerate(idx):
                # delta method for dispersions estimated on the log scale
                se[names[i]] = float(sd[j] * (fit.x[i] if i == len(names) - 1 else 1.0))
    elif fit1.converged and fit2.converged:
        warn.append("Hessian singular or ill-conditioned; standard errors omitted")
    conds = [c for c in (fit1.condition, fit2.condition) if c is not None]
    fixed = tuple(n for n, f in zip(n1 + n2, np.concatenate([~free1, ~free2])) if f
                  and not (n in ("phi1", "phi2") and _fixed_disp(spec, n)))
    if not (fit1.converged and fit2.converged):
        warn.append("optimizer did not converge; returning best point found")
    return FitResult(theta, ll.ell, bool(fit1.converged and fit2.converged),
                     fit1.iterations + fit2.iterations, se,
                     max(conds) if conds else None, ll.ell1, ll.ell2, fixed, warn)


def _fixed_disp(spec, name):
    return (spec.family1 if name == "phi1" else spec.family2).fixed_dispersion


def _free_masks(spec, f1, f2):
    m1, m2 = ParamVector.free_masks(spec)
    return m1 & ~f1, m2 & ~f2


def fit_mle(spec: ModelSpec, data: BivariateSeries, init: Optional[ParamVector] = None,
            options: Optional[FitOptions] = None, fixed_mask=None,
            prepared: Optional[Prepared] = None) -> FitResult:
    """Maximize the conditional log-likelihood.

    Parameters
    ----------
    init : ParamVector, optional
        Starting point; fixed parameters are held at these values.
    fixed_mask : mapping or bool array, optional
        Parameters to hold fixed, by name (``"rho"``, ``"gamma_2"``, ...) or
        as flags over :meth:`ParamVector.names`.
    """
    opts = options or FitOptions()
    prep = prepared or Prepared(spec, data)
    theta0 = init.copy() if init is not None else default_init(spec, data, prep)
    f1, f2 = _resolve_fixed(spec, fixed_mask)
    free1, free2 = _free_masks(spec, f1, f2)
    fit1 = _optimize_block(_Block(prep.dims1, prep.series1, prep.no_delta, theta0.block1(),
                                  free1, prep.n_scored), opts)
    fit2 = _optimize_block(_Block(prep.dims2, prep.series2, prep.all_in, theta0.block2(),
                                  free2, prep.n_scored), opts)
    return _assemble(spec, prep, fit1, fit2, free1, free2)


# ---------------------------------------------------------------- LR tests

def _lr_report(spec, prep, fit1, null2, alt2, free1, fnull2, falt2, df, direction, opts):
    fit_null = _assemble(spec, prep, fit1, null2, free1, fnull2)
    fit_alt = _assemble(spec, prep, fit1, alt2, free1, falt2)
    raw = 2.0 * (fit_alt.loglik - fit_null.loglik)
    warn = []
    if raw < -LR_DEFECT_TOL:
        warn.append(f"negative LR {raw:.3g}: convergence defect")
    lr = max(raw, 0.0)
    if not (fit_null.converged and fit_alt.converged):
        warn.append("a fit did not converge; p-value computed from best points")
    if prep.data.n < 1000:
        warn.append(SMALL_SAMPLE_WARNING)
    p = float(stats.chi2.sf(lr, df)) if df > 0 else 1.0
    return TestReport(lr, df, p, fit_null, fit_alt, tuple(direction), raw, warn)


def _nested_fits(spec, data, null_fixed: Sequence[str], options, init, prepared, fixed_mask):
    opts = options or FitOptions()
    prep = prepared or Prepared(spec, data)
    theta0 = init.copy() if init is not None else default_init(spec, data, prep)
    n1, n2 = ParamVector.block_names(spec)
    for name in null_fixed:
        if name == "rho":
            theta0.rho = 0.0
        else:
            theta0.gamma[int(name.split("_")[1]) - 1] = 0.0
    f1, f_alt = _resolve_fixed(spec, fixed_mask)
    free1, falt2 = _free_masks(spec, f1, f_alt)
    fnull2 = falt2.copy()
    for name in null_fixed:
        fnull2[n2.index(name)] = False
    fit1 = _optimize_block(_Block(prep.dims1, prep.series1, prep.no_delta, theta0.block1(),
                                  free1, prep.n_scored), opts)
    null2 = _optimize_block(_Block(prep.dims2, prep.series2, prep.all_in, theta0.block2(),
                                   fnull2, prep.n_scored), opts)
    # alternative starts at the null optimum, so it can only improve on it
    alt2 = _optimize_block(_Block(prep.dims2, prep.series2, prep.all_in, null2.x,
                                  falt2, prep.n_scored), opts)
    df = int(np.sum(falt2 & ~fnull2))
    return prep, fit1, null2, alt2, free1, fnull2, falt2, opts, df


def lr_granger_test(spec: ModelSpec, data: BivariateSeries, options: Optional[FitOptions] = None,
                    init: Optional[ParamVector] = None, direction=("y1", "y2"),
                    prepared: Optional[Prepared] = None, fixed_mask=None) -> TestReport:
    """LR test of H0: gamma = 0 and rho = 0 against the full model.

    ``df`` is ``k + 1`` unless ``fixed_mask`` also pins some of the tested
    parameters in the alternative; with nothing left to test the statistic
    is 0 and the p-value 1.
    """
    null_fixed = [f"gamma_{l}" for l in range(1, spec.k + 1)] + ["rho"]
    prep, fit1, null2, alt2, free1, fnull2, falt2, opts, df = _nested_fits(
        spec, data, null_fixed, options, init, prepared, fixed_mask)
    return _lr_report(spec, prep, fit1, null2, alt2, free1, fnull2, falt2, df, direction, opts)


def lr_scalar_test(spec: ModelSpec, data: BivariateSeries, target: str,
                   options: Optional[FitOptions] = None, init: Optional[ParamVector] = None,
                   direction=("y1", "y2"), prepared: Optional[Prepared] = None) -> TestReport:
    """LR test of a single causal parameter (``"rho"`` or ``"gamma_l"``) at zero, df = 1."""
    valid = ["rho"] + [f"gamma_{l}" for l in range(1, spec.k + 1)]
    if target not in valid:
        raise KeyError(f"parameter {target!r} not in model; available: {valid}")
    prep, fit1, null2, alt2, free1, fnull2, falt2, opts, df = _nested_fits(
        spec, data, [target], options, init, prepared, None)
    return _lr_report(spec, prep, fit1, null2, alt2, free1, fnull2, falt2, df, direction, opts)


# --------------------------------------------------------------- bootstrap

@dataclass
class BootstrapResult:
    proportions: np.ndarray  # per gamma lag
    n_success: int
    n_failed: int
    level: float

    def to_dict(self) -> dict:
        return to_jsonable({"proportions": self.proportions, "n_success": self.n_success,
                            "n_failed": self.n_failed, "level": self.level})


def _bootstrap_replica(task):
    spec, theta, n, burn_in, z, seed = task
    try:
        data = simulate(spec, theta, n, burn_in=burn_in, rng=np.random.default_rng(seed))
        fit = fit_mle(spec, data, init=theta)
    except (ArithmeticError, ValueError):
        return None
    if not fit.converged or fit.std_errors is None:
        return None
    gam = fit.theta_hat.gamma
    se = np.array([fit.std_errors[f"gamma_{l}"] for l in range(1, spec.k + 1)])
    return (np.abs(gam) > z * se).astype(float)


def bootstrap_inclusion(spec: ModelSpec, fit: FitResult, n: int, B: int, level: float = 0.95,
                        rng=None, burn_in: int = DEFAULT_BURN_IN, workers: int = 1,
                        max_failed: float = 0.2) -> BootstrapResult:
    """Share of parametric-bootstrap refits whose Wald interval for gamma_l excludes 0."""
    if B < 1:
        raise ValueError("B must be at least 1")
    if spec.k < 1:
        raise ValueError("model has no lagged causal terms")
    if not fit.converged:
        raise ValueError("bootstrap requires a converged fit")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = float(stats.norm.ppf(0.5 + level / 2))
    tasks = [(spec, fit.theta_hat, n, burn_in, z, s) for s in spawn(rng, B)]
    results = parallel_map(_bootstrap_replica, tasks, workers)
    ok = [r for r in results if r is not None]
    failed = B - len(ok)
    if failed > max_failed * B:
        raise RuntimeError(f"{failed} of {B} bootstrap replicas failed")
    props = np.mean(ok, axis=0) if ok else np.full(spec.k, np.nan)
    return BootstrapResult(props, len(ok), failed, level)
