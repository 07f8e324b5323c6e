"""Granger causality between exponential-family time series.

Bivariate GLM recursions with lagged and contemporaneous cross terms,
fitted by maximum likelihood or by MCMC with spike-and-slab selection of
the causal lag order.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

from .expfam import CouplingKind, FamilyKind, LinkKind
from .model import (
    BivariateSeries,
    ModelSpec,
    ParamVector,
    log_likelihood,
    preset,
    simulate,
)

__all__ = [
    "CouplingKind", "FamilyKind", "LinkKind", "BivariateSeries", "ModelSpec",
    "ParamVector", "log_likelihood", "preset", "simulate", "__version__",
]
