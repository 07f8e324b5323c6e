"""Bivariate causal time-series GLM: specification, recursions, likelihood, simulation.

Series 1 (the causing series) follows its own GLM recursion. Series 2 (the
caused series) has mean ``g2^{-1}(nu2_t) * h_rho(y1_t)`` where ``nu2_t``
feeds on its own past, its own lagged linear predictor and ``k`` lags of
``T1(y1)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .expfam import (
    CouplingKind,
    FamilyKind,
    LinkKind,
    LinkTag,
    Support,
    Transform,
    aux_constants,
)

DEFAULT_BURN_IN = 500
LOG_LINK_NU_CAP = 50.0
IDENTITY_NU_CAP = 1e8


class NumericalOverflowError(ArithmeticError):
    """A recursion produced a non-finite intermediate."""

    def __init__(self, t: int, series: int):
        super().__init__(f"non-finite linear predictor or mean in series {series} at t={t}")
        self.t = t
        self.series = series


class SimulationDivergedError(ArithmeticError):
    """A simulated recursion left the documented cap on |nu|."""

    def __init__(self, t: int):
        super().__init__(f"simulation diverged at t={t}")
        self.t = t


@dataclass(frozen=True)
class ModelSpec:
    """Families, links, coupling and orders of a Granger-GLM.

    ``r``/``s`` are the autoregressive and feedback orders of series 1,
    ``p``/``q`` those of series 2, and ``k`` the number of lags of series 1
    entering series 2.
    """

    family1: FamilyKind
    family2: FamilyKind
    link1: LinkKind
    link2: LinkKind
    coupling: Optional[CouplingKind] = None
    p: int = 1
    q: int = 1
    r: int = 1
    s: int = 1
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family1", FamilyKind(self.family1))
        object.__setattr__(self, "family2", FamilyKind(self.family2))
        if self.coupling is None:
            object.__setattr__(self, "coupling", CouplingKind.default_for(self.family2))
        else:
            object.__setattr__(self, "coupling", CouplingKind(self.coupling))
        for name in ("p", "q", "r", "s", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"order {name} must be a nonnegative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for fam, link, i in ((self.family1, self.link1, 1), (self.family2, self.link2, 2)):
            if link.tag is LinkTag.LOGIT and fam is not FamilyKind.BERNOULLI:
                raise ValueError(f"logit link on series {i} needs a Bernoulli family")
            if link.tag is LinkTag.LOG and fam in (FamilyKind.GAUSSIAN, FamilyKind.BERNOULLI):
                raise ValueError(f"log link on series {i} needs a positive-mean family")
            if link.transform is Transform.LOG1P and fam.support is not Support.NONNEG_INTEGERS:
                raise ValueError(f"log1p transform on series {i} needs a count family")

    @property
    def lag(self) -> int:
        """Number of leading observations conditioned upon, max(p, q, r, s, k)."""
        return max(self.p, self.q, self.r, self.s, self.k)

    def with_orders(self, **orders) -> "ModelSpec":
        kw = self.to_dict()
        kw.update(orders)
        return ModelSpec.from_dict(kw)

    def to_dict(self) -> dict:
        return {
            "family1": self.family1.value,
            "family2": self.family2.value,
            "link1": {"tag": self.link1.tag.value, "transform": self.link1.transform.value},
            "link2": {"tag": self.link2.tag.value, "transform": self.link2.transform.value},
            "coupling": self.coupling.value,
            "p": self.p, "q": self.q, "r": self.r, "s": self.s, "k": self.k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        def link(v):
            if isinstance(v, LinkKind):
                return v
            if isinstance(v, str):
                return LinkKind(v) if v != "log1p" else LinkKind.log1p()
            return LinkKind(v["tag"], v.get("transform", "same-as-link"))

        return cls(
            family1=FamilyKind(d["family1"]),
            family2=FamilyKind(d["family2"]),
            link1=link(d["link1"]),
            link2=link(d["link2"]),
            coupling=d.get("coupling"),
            p=d.get("p", 1), q=d.get("q", 1), r=d.get("r", 1), s=d.get("s", 1), k=d.get("k", 1),
        )

    # kernel plumbing
    def dims1(self):
        f, l = self.family1, self.link1
        return (self.r, self.s, 0, 0, f.code, l.tag.code, self.coupling.code, self.lag)

    def dims2(self):
        f, l = self.family2, self.link2
        return (self.p, self.q, self.k, 1, f.code, l.tag.code, self.coupling.code, self.lag)


def _arr(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).copy()


@dataclass
class ParamVector:
    """theta = (beta1, alpha1, phi1, beta2, alpha2, gamma, rho, phi2).

    ``beta1``/``beta2`` carry their intercept first. The flat layout used by
    :meth:`to_vector` follows the order above and omits dispersions of
    fixed-dispersion families.
    """

    beta1: np.ndarray
    alpha1: np.ndarray
    beta2: np.ndarray
    alpha2: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rho: float = 0.0
    phi1: float = 1.0
    phi2: float = 1.0

    def __post_init__(self):
        self.beta1 = _arr(self.beta1)
        self.beta2 = _arr(self.beta2)
        self.alpha1 = np.asarray(self.alpha1, dtype=float).reshape(-1).copy()
        self.alpha2 = np.asarray(self.alpha2, dtype=float).reshape(-1).copy()
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1).copy()
        self.rho = float(self.rho)
        self.phi1 = float(self.phi1)
        self.phi2 = float(self.phi2)

    def copy(self) -> "ParamVector":
        return ParamVector(self.beta1, self.alpha1, self.beta2, self.alpha2,
                           self.gamma, self.rho, self.phi1, self.phi2)

    def block1(self) -> np.ndarray:
        return np.concatenate([self.beta1, self.alpha1, [self.phi1]])

    def block2(self) -> np.ndarray:
        return np.concatenate([self.beta2, self.alpha2, self.gamma, [self.rho, self.phi2]])

    @classmethod
    def from_blocks(cls, spec: ModelSpec, x1, x2) -> "ParamVector":
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        r1 = spec.r + 1
        r2 = spec.p + 1
        return cls(
            beta1=x1[:r1], alpha1=x1[r1:r1 + spec.s], phi1=x1[-1],
            beta2=x2[:r2], alpha2=x2[r2:r2 + spec.q],
            gamma=x2[r2 + spec.q:r2 + spec.q + spec.k],
            rho=x2[-2], phi2=x2[-1],
        )

    @staticmethod
    def block_names(spec: ModelSpec) -> tuple[list[str], list[str]]:
        n1 = ([f"beta1_{i}" for i in range(spec.r + 1)]
              + [f"alpha1_{j}" for j in range(1, spec.s + 1)] + ["phi1"])
        n2 = ([f"beta2_{i}" for i in range(spec.p + 1)]
              + [f"alpha2_{j}" for j in range(1, spec.q + 1)]
              + [f"gamma_{l}" for l in range(1, spec.k + 1)] + ["rho", "phi2"])
        return n1, n2

    @staticmethod
    def free_masks(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
        """Boolean masks over block1/block2 selecting the free-parameter layout."""
        n1, n2 = ParamVector.block_names(spec)
        m1 = np.ones(len(n1), dtype=bool)
        m2 = np.ones(len(n2), dtype=bool)
        m1[-1] = not spec.family1.fixed_dispersion
        m2[-1] = not spec.family2.fixed_dispersion
        return m1, m2

    @staticmethod
    def names(spec: ModelSpec) -> list[str]:
        n1, n2 = ParamVector.block_names(spec)
        m1, m2 = ParamVector.free_masks(spec)
        return [n for n, m in zip(n1, m1) if m] + [n for n, m in zip(n2, m2) if m]

    def to_vector(self, spec: ModelSpec) -> np.ndarray:
        m1, m2 = self.free_masks(spec)
        return np.concatenate([self.block1()[m1], self.block2()[m2]])

    @classmethod
    def from_vector(cls, spec: ModelSpec, vec) -> "ParamVector":
        vec = np.asarray(vec, dtype=float)
        m1, m2 = cls.free_masks(spec)
        x1 = np.ones(m1.size)
        x2 = np.ones(m2.size)
        x1[m1] = vec[:m1.sum()]
        x2[m2] = vec[m1.sum():]
        return cls.from_blocks(spec, x1, x2)

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1.tolist(), "alpha1": self.alpha1.tolist(),
            "phi1": self.phi1, "beta2": self.beta2.tolist(),
            "alpha2": self.alpha2.tolist(), "gamma": self.gamma.tolist(),
            "rho": self.rho, "phi2": self.phi2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamVector":
        return cls(beta1=d["beta1"], alpha1=d.get("alpha1", []), beta2=d["beta2"],
                   alpha2=d.get("alpha2", []), gamma=d.get("gamma", []),
                   rho=d.get("rho", 0.0), phi1=d.get("phi1", 1.0), phi2=d.get("phi2", 1.0))


@dataclass
class BivariateSeries:
    """Aligned trajectories (y1, y2) with their support tags."""

    y1: np.ndarray
    y2: np.ndarray
    domains: tuple[Support, Support] = (Support.REALS, Support.REALS)

    def __post_init__(self):
        self.y1 = np.asarray(self.y1, dtype=float).reshape(-1)
        self.y2 = np.asarray(self.y2, dtype=float).reshape(-1)
        if self.y1.shape != self.y2.shape:
            raise ValueError(f"series lengths differ: {self.y1.size} vs {self.y2.size}")

    @property
    def n(self) -> int:
        return int(self.y1.size)

    def check(self, spec: ModelSpec) -> None:
        """Raise ``ValueError`` if the data cannot be scored under ``spec``."""
        if self.n <= spec.lag:
            raise ValueError(f"need n > {spec.lag} observations, got {self.n}")
        for y, fam, i in ((self.y1, spec.family1, 1), (self.y2, spec.family2, 2)):
            bad = ~fam.in_support(y)
            if bad.any():
                t = int(np.argmax(bad))
                raise ValueError(f"y{i}[{t}]={y[t]!r} outside the {fam.value} support")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y1", "y2"])
        for t, (a, b) in enumerate(zip(self.y1, self.y2), start=1):
            w.writerow([t, _fmt(a), _fmt(b)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, domains=None) -> "BivariateSeries":
        p = Path(str(path_or_text)) if "\n" not in str(path_or_text) else None
        text = p.read_text() if p is not None else str(path_or_text)
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or not {"t", "y1", "y2"} <= set(rows[0]):
            raise ValueError("expected a CSV with header t,y1,y2")
        rows.sort(key=lambda r: float(r["t"]))
        y1 = [float(r["y1"]) for r in rows]
        y2 = [float(r["y2"]) for r in rows]
        return cls(y1, y2, domains or (Support.REALS, Support.REALS))


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


@dataclass
class MeanPaths:
    nu1: np.ndarray
    nu2: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    effective_mu2: np.ndarray
    initial: np.ndarray  # True where t <= l (initialization, not scored)


class LogLik(NamedTuple):
    ell1: float
    ell2: float
    ell: float


def _transformed(link: LinkKind, y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        if link.transform is Transform.LOG1P:
            return np.log1p(y)
        if link.transform is Transform.IDENTITY:
            return y.copy()
        if link.tag is LinkTag.LOG:
            return np.where(y > 0, np.log(np.where(y > 0, y, 1.0)), -np.inf)
        if link.tag is LinkTag.LOGIT:
            return np.log(y) - np.log1p(-y)
        return y.copy()


class Prepared:
    """Data arranged for the compiled kernels (transforms and constants cached)."""

    def __init__(self, spec: ModelSpec, data: BivariateSeries, check: bool = True):
        if check:
            data.check(spec)
        self.spec = spec
        self.data = data
        y1 = np.ascontiguousarray(data.y1)
        y2 = np.ascontiguousarray(data.y2)
        ty1 = _transformed(spec.link1, y1)
        ty2 = _transformed(spec.link2, y2)
        self.series1 = (y1, ty1, aux_constants(spec.family1, y1), y1, ty1)
        self.series2 = (y2, ty2, aux_constants(spec.family2, y2), y1, ty1)
        self.dims1 = spec.dims1()
        self.dims2 = spec.dims2()
        self.no_delta = np.zeros(0, dtype=np.int8)
        self.all_in = np.ones(spec.k, dtype=np.int8)

    @property
    def n_scored(self) -> int:
        return self.data.n - self.spec.lag

    def delta_array(self, delta) -> np.ndarray:
        if delta is None:
            return self.all_in
        d = np.asarray(delta, dtype=np.int8).reshape(-1)
        if d.size != self.spec.k:
            raise ValueError(f"delta must have length k={self.spec.k}, got {d.size}")
        return d

    def loglik1(self, x1) -> tuple[float, int]:
        return K.block_loglik(np.asarray(x1, dtype=float), self.dims1, self.series1, self.no_delta)

    def loglik2(self, x2, delta=None) -> tuple[float, int]:
        return K.block_loglik(np.asarray(x2, dtype=float), self.dims2, self.series2,
                              self.delta_array(delta))


def _check_theta(spec: ModelSpec, theta: ParamVector) -> None:
    problems = [d for d in validate_spec(spec, theta) if d.level == "error"]
    if problems:
        raise ValueError("; ".join(d.message for d in problems))


def compute_means(spec: ModelSpec, theta: ParamVector, data: BivariateSeries,
                  delta=None) -> MeanPaths:
    """Linear predictors and means of both series along the observed data.

    Raises
    ------
    NumericalOverflowError
        At the first t where a linear predictor or mean is not finite.
    """
    _check_theta(spec, theta)
    prep = Prepared(spec, data)
    n = data.n
    out = [np.empty(n) for _ in range(6)]
    bad1, _ = K.block_path(theta.block1(), prep.dims1, prep.series1, prep.no_delta,
                           out[0], out[1], out[2])
    if bad1 >= 0:
        raise NumericalOverflowError(int(bad1), 1)
    bad2, _ = K.block_path(theta.block2(), prep.dims2, prep.series2,
                           prep.delta_array(delta), out[3], out[4], out[5])
    if bad2 >= 0:
        raise NumericalOverflowError(int(bad2), 2)
    initial = np.arange(n) < spec.lag
    return MeanPaths(nu1=out[0], nu2=out[3], mu1=out[1], mu2=out[4],
                     effective_mu2=out[5], initial=initial)


def log_likelihood(spec: ModelSpec, theta: ParamVector, data: BivariateSeries,
                   delta=None, prepared: Optional[Prepared] = None) -> LogLik:
    """Conditional log-likelihood scored over t = l+1..n, split as ell1 + ell2.

    Returns ``-inf`` components where a density vanishes; raises
    :class:`NumericalOverflowError` on non-finite recursions.
    """
    _check_theta(spec, theta)
    prep = prepared or Prepared(spec, data)
    l1, bad1 = prep.loglik1(theta.block1())
    if bad1 >= 0:
        raise NumericalOverflowError(int(bad1), 1)
    l2, bad2 = prep.loglik2(theta.block2(), delta)
    if bad2 >= 0:
        raise NumericalOverflowError(int(bad2), 2)
    return LogLik(float(l1), float(l2), float(l1 + l2))


def _nu_cap(link: LinkKind) -> float:
    return IDENTITY_NU_CAP if link.tag is LinkTag.IDENTITY else LOG_LINK_NU_CAP


def simulate(spec: ModelSpec, theta: ParamVector, n: int, burn_in: int = DEFAULT_BURN_IN,
             rng=None) -> BivariateSeries:
    """Generate a trajectory: y1_t from its family, then y2_t given y1_t.

    The first ``max(p, q, r, s, k)`` points are drawn at each recursion's
    fixed point ``beta0 / (1 - sum(alpha))``; ``burn_in`` points are dropped.
    """
    if n <= spec.lag:
        raise ValueError(f"n must exceed max order {spec.lag}")
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    _check_theta(spec, theta)
    rng = np.random.default_rng(rng)
    cap = np.array([_nu_cap(spec.link1), _nu_cap(spec.link2)])
    y1, y2, bad = K.simulate_kernel(
        theta.block1(), spec.dims1(), spec.link1.transform.code,
        theta.block2(), spec.dims2(), spec.link2.transform.code,
        int(n + burn_in), cap, rng)
    if bad >= 0:
        raise SimulationDivergedError(int(bad))
    return BivariateSeries(y1[burn_in:], y2[burn_in:],
                           (spec.family1.support, spec.family2.support))


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    code: str
    message: str


def validate_spec(spec: ModelSpec, theta: ParamVector) -> list[Diagnostic]:
    """Structured problems with a (spec, theta) pair; empty when well formed."""
    out: list[Diagnostic] = []
    expected = {
        "beta1": spec.r + 1, "alpha1": spec.s, "beta2": spec.p + 1,
        "alpha2": spec.q, "gamma": spec.k,
    }
    for name, size in expected.items():
        got = getattr(theta, name).size
        if got != size:
            out.append(Diagnostic("error", "length-mismatch",
                                  f"{name} has length {got}, expected {size}"))
    for i, (fam, phi) in enumerate(((spec.family1, theta.phi1), (spec.family2, theta.phi2)), 1):
        if not (math.isfinite(phi) and phi > 0):
            out.append(Diagnostic("error", "dispersion", f"phi{i} must be positive, got {phi}"))
        elif fam.fixed_dispersion and phi != 1.0:
            out.append(Diagnostic("error", "fixed-dispersion",
                                  f"phi{i} is fixed at 1 for {fam.value}, got {phi}"))
    all_finite = all(np.all(np.isfinite(getattr(theta, n)))
                     for n in ("beta1", "alpha1", "beta2", "alpha2", "gamma"))
    if not (all_finite and math.isfinite(theta.rho)):
        out.append(Diagnostic("error", "non-finite", "theta has non-finite entries"))
    if not any(d.code == "length-mismatch" for d in out):
        for i, (b, a) in enumerate(((theta.beta1, theta.alpha1), (theta.beta2, theta.alpha2)), 1):
            total = abs(a.sum()) + abs(b[1:].sum())
            if total >= 1:
                out.append(Diagnostic(
                    "warning", "stability",
                    f"series {i}: |sum alpha| + |sum beta| = {total:.3g} >= 1; "
                    "recursion may be non-stationary"))
    return out


# ------------------------------------------------------------------ presets

def poisson_gamma_spec(k: int = 2, p: int = 1, q: int = 2, r: int = 1, s: int = 2) -> ModelSpec:
    """Gamma causing series (log link, T = log) driving a Poisson count series (T = log1p)."""
    return ModelSpec(FamilyKind.GAMMA, FamilyKind.POISSON, LinkKind.log(), LinkKind.log1p(),
                     CouplingKind.EXP, p=p, q=q, r=r, s=s, k=k)


def poisson_gamma_theta(rho: float = 0.1, alpha1=(0.1, 0.4), gamma=(-0.1, -0.5)) -> ParamVector:
    return ParamVector(beta1=[0.1, -0.1], alpha1=alpha1, beta2=[0.2, 0.3],
                       alpha2=[0.2, -0.1], gamma=gamma, rho=rho, phi1=1.0, phi2=1.0)


def geometric_spec(k: int = 1, p: int = 1, q: int = 1, r: int = 1, s: int = 1) -> ModelSpec:
    return ModelSpec(FamilyKind.GEOMETRIC, FamilyKind.GEOMETRIC, LinkKind.log1p(),
                     LinkKind.log1p(), CouplingKind.EXP, p=p, q=q, r=r, s=s, k=k)


def geometric_theta(gamma: Sequence[float] = (-0.5,), rho: float = 0.1) -> ParamVector:
    return ParamVector(beta1=[0.3, 0.2], alpha1=[0.3], beta2=[0.5, 0.2], alpha2=[0.2],
                       gamma=gamma, rho=rho)


PRESETS = {
    # name: (spec factory, theta factory)
    "poisson-gamma": (poisson_gamma_spec, lambda: poisson_gamma_theta()),
    "poisson-gamma-bayes": (poisson_gamma_spec,
                            lambda: poisson_gamma_theta(rho=0.5, alpha1=(0.2, 0.4))),
    "poisson-gamma-null": (poisson_gamma_spec,
                           lambda: poisson_gamma_theta(rho=0.0, gamma=(0.0, 0.0))),
    "geometric": (geometric_spec, lambda: geometric_theta()),
}


def preset(name: str) -> tuple[ModelSpec, ParamVector]:
    try:
        make_spec, make_theta = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return make_spec(), make_theta()
