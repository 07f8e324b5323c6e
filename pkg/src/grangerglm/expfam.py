"""Exponential-family kernels, link functions, series transforms and couplings.

Five members are supported, each mean-parameterized:

==========  ===================  ============================  ==========
family      support              variance                      dispersion
==========  ===================  ============================  ==========
Gaussian    reals                phi                           free
Poisson     {0, 1, ...}          mu                            fixed at 1
Gamma       (0, inf)             phi * mu**2 (shape 1/phi)     free
Geometric   {0, 1, ...}          mu * (1 + mu)                 fixed at 1
Bernoulli   {0, 1}               mu * (1 - mu)                 fixed at 1
==========  ===================  ============================  ==========
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K


class DomainError(ValueError):
    """An argument lies outside the domain of a density, link or transform."""


class CouplingSaturation(RuntimeWarning):
    """exp coupling argument exceeded the saturation cap."""


class Support(enum.Enum):
    REALS = "reals"
    NONNEG_INTEGERS = "nonneg-integers"
    POSITIVE_REALS = "positive-reals"
    BINARY = "binary"


class FamilyKind(enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    GAMMA = "gamma"
    GEOMETRIC = "geometric"
    BERNOULLI = "bernoulli"

    @property
    def code(self) -> int:
        return _FAMILY_CODES[self]

    @property
    def support(self) -> Support:
        return _SUPPORT[self]

    @property
    def fixed_dispersion(self) -> bool:
        return self in (FamilyKind.POISSON, FamilyKind.GEOMETRIC, FamilyKind.BERNOULLI)

    def variance(self, mu):
        """Variance function V(mu); the variance of a draw is phi * V(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self is FamilyKind.GAUSSIAN:
            return np.ones_like(mu)
        if self is FamilyKind.POISSON:
            return mu
        if self is FamilyKind.GAMMA:
            return mu * mu
        if self is FamilyKind.GEOMETRIC:
            return mu * (1.0 + mu)
        return mu * (1.0 - mu)

    def in_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        finite = np.isfinite(y)
        if self is FamilyKind.GAUSSIAN:
            return finite
        if self is FamilyKind.GAMMA:
            return finite & (y > 0)
        integer = finite & (np.floor(y) == y)
        if self is FamilyKind.BERNOULLI:
            return integer & ((y == 0) | (y == 1))
        return integer & (y >= 0)

    def valid_mean(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self is FamilyKind.GAUSSIAN:
            return np.isfinite(mu)
        if self is FamilyKind.BERNOULLI:
            return (mu > 0) & (mu < 1)
        return np.isfinite(mu) & (mu > 0)


_FAMILY_CODES = {
    FamilyKind.GAUSSIAN: K.GAUSSIAN,
    FamilyKind.POISSON: K.POISSON,
    FamilyKind.GAMMA: K.GAMMA,
    FamilyKind.GEOMETRIC: K.GEOMETRIC,
    FamilyKind.BERNOULLI: K.BERNOULLI,
}
_SUPPORT = {
    FamilyKind.GAUSSIAN: Support.REALS,
    FamilyKind.POISSON: Support.NONNEG_INTEGERS,
    FamilyKind.GAMMA: Support.POSITIVE_REALS,
    FamilyKind.GEOMETRIC: Support.NONNEG_INTEGERS,
    FamilyKind.BERNOULLI: Support.BINARY,
}


class Transform(enum.Enum):
    SAME_AS_LINK = "same-as-link"
    LOG1P = "log1p"
    IDENTITY = "identity"

    @property
    def code(self) -> int:
        return {Transform.SAME_AS_LINK: K.T_LINK, Transform.LOG1P: K.T_LOG1P,
                Transform.IDENTITY: K.T_IDENTITY}[self]


class LinkTag(enum.Enum):
    LOG = "log"
    IDENTITY = "identity"
    LOGIT = "logit"

    @property
    def code(self) -> int:
        return {LinkTag.LOG: K.LOG, LinkTag.IDENTITY: K.IDENTITY,
                LinkTag.LOGIT: K.LOGIT}[self]


@dataclass(frozen=True)
class LinkKind:
    """A link g together with the transform T applied to lagged observations."""

    tag: LinkTag = LinkTag.LOG
    transform: Transform = Transform.SAME_AS_LINK

    def __post_init__(self):
        object.__setattr__(self, "tag", LinkTag(self.tag))
        object.__setattr__(self, "transform", Transform(self.transform))
        if self.transform is Transform.LOG1P and self.tag is not LinkTag.LOG:
            raise ValueError("log1p transform is only defined for the log link")

    @classmethod
    def log(cls) -> "LinkKind":
        return cls(LinkTag.LOG)

    @classmethod
    def log1p(cls) -> "LinkKind":
        return cls(LinkTag.LOG, Transform.LOG1P)

    @classmethod
    def identity(cls) -> "LinkKind":
        return cls(LinkTag.IDENTITY)

    @classmethod
    def logit(cls, transform: Transform = Transform.IDENTITY) -> "LinkKind":
        return cls(LinkTag.LOGIT, transform)


class CouplingKind(enum.Enum):
    EXP = "exp"
    TWO_LOGIT = "two-logit"

    @property
    def code(self) -> int:
        return K.H_EXP if self is CouplingKind.EXP else K.H_TWO_LOGIT

    @classmethod
    def default_for(cls, family: FamilyKind) -> "CouplingKind":
        if family is FamilyKind.BERNOULLI:
            return cls.TWO_LOGIT
        return cls.EXP


def _check_params(family: FamilyKind, mu: float, phi: float) -> float:
    if not family.valid_mean(mu):
        raise DomainError(f"mean {mu!r} outside the domain of {family.value}")
    if family.fixed_dispersion:
        return 1.0
    if not (np.isfinite(phi) and phi > 0):
        raise DomainError(f"dispersion must be positive, got {phi!r}")
    return float(phi)


def aux_constants(family: FamilyKind, y: np.ndarray) -> np.ndarray:
    """Per-observation constants consumed by the compiled log density."""
    y = np.asarray(y, dtype=float)
    if family is FamilyKind.POISSON:
        from scipy.special import gammaln
        return gammaln(y + 1.0)
    if family is FamilyKind.GAMMA:
        with np.errstate(divide="ignore"):
            return np.log(y)
    return np.zeros_like(y)


def ef_log_density(family: FamilyKind, y: float, mu: float, phi: float = 1.0) -> float:
    """Log density (or log mass) of ``y`` under ``family`` with mean ``mu``.

    Raises
    ------
    DomainError
        If ``y`` is outside the support or ``mu``/``phi`` outside their domain.
    """
    family = FamilyKind(family)
    if not family.in_support(y):
        raise DomainError(f"y={y!r} outside the support of {family.value}")
    phi = _check_params(family, mu, phi)
    aux = float(aux_constants(family, np.array([y]))[0])
    lgk = math.lgamma(1.0 / phi) if family is FamilyKind.GAMMA else 0.0
    return float(K.log_density(family.code, float(y), float(mu), phi, aux, lgk))


def ef_sample(family: FamilyKind, mu, phi: float = 1.0, rng=None, size=None):
    """Draw from ``family`` with mean ``mu`` and dispersion ``phi``."""
    family = FamilyKind(family)
    rng = np.random.default_rng(rng)
    mu_arr = np.asarray(mu, dtype=float)
    if not np.all(family.valid_mean(mu_arr)):
        raise DomainError(f"mean outside the domain of {family.value}")
    phi = 1.0 if family.fixed_dispersion else phi
    if not family.fixed_dispersion and not phi > 0:
        raise DomainError(f"dispersion must be positive, got {phi!r}")
    if family is FamilyKind.GAUSSIAN:
        return rng.normal(mu_arr, math.sqrt(phi), size=size)
    if family is FamilyKind.POISSON:
        return rng.poisson(mu_arr, size=size)
    if family is FamilyKind.GAMMA:
        return rng.gamma(1.0 / phi, mu_arr * phi, size=size)
    if family is FamilyKind.GEOMETRIC:
        return rng.geometric(1.0 / (1.0 + mu_arr), size=size) - 1
    return (rng.random(size=size if size is not None else mu_arr.shape) < mu_arr).astype(np.int64)


def coupling_h(kind: CouplingKind, rho: float, y):
    """Contemporaneous coupling h_rho(y); ``h_0(y) == 1`` for both kinds.

    The exp kind saturates at ``exp(700)`` and emits
    :class:`CouplingSaturation` when that happens.
    """
    kind = CouplingKind(kind)
    a = rho * np.asarray(y, dtype=float)
    if kind is CouplingKind.TWO_LOGIT:
        from scipy.special import expit
        out = 2.0 * expit(a)
    else:
        if np.any(a > K.EXP_CAP):
            warnings.warn("exp coupling saturated at exp(700)", CouplingSaturation, stacklevel=2)
        out = np.exp(np.minimum(a, K.EXP_CAP))
    return float(out) if out.ndim == 0 else out


def link_apply(link: LinkKind, x):
    x = np.asarray(x, dtype=float)
    if link.tag is LinkTag.LOG:
        if np.any(x <= 0):
            raise DomainError("log link requires x > 0")
        out = np.log(x)
    elif link.tag is LinkTag.LOGIT:
        if np.any((x <= 0) | (x >= 1)):
            raise DomainError("logit link requires 0 < x < 1")
        out = np.log(x) - np.log1p(-x)
    else:
        out = x
    return float(out) if out.ndim == 0 else out


def link_invert(link: LinkKind, v):
    v = np.asarray(v, dtype=float)
    if link.tag is LinkTag.LOG:
        out = np.exp(v)
    elif link.tag is LinkTag.LOGIT:
        from scipy.special import expit
        out = expit(v)
    else:
        out = v
    return float(out) if out.ndim == 0 else out


def transform_T(link: LinkKind, y):
    """Series transform entering the recursion: log(y+1), y, or the link itself."""
    y = np.asarray(y, dtype=float)
    if link.transform is Transform.LOG1P:
        if np.any(y < 0):
            raise DomainError("log1p transform requires y >= 0")
        out = np.log1p(y)
    elif link.transform is Transform.IDENTITY:
        out = y
    else:
        return link_apply(link, y)
    return float(out) if out.ndim == 0 else out
