"""Gaussian-process emulation for inferring Holzapfel-Ogden material parameters.

The pipeline runs from a Sobol design (:mod:`hoemu.design`) through the
analytic forward model (:mod:`hoemu.forward`) to GP surrogates
(:mod:`hoemu.gp`), surrogate losses (:mod:`hoemu.emulate`), their
minimization with uncertainty estimates (:mod:`hoemu.infer`) and the
method benchmark (:mod:`hoemu.bench`).
"""

from ._backend import NAME as BACKEND
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    FactorizationError,
    HoemuError,
    KinematicsError,
    OptimizationError,
    SaturationError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DataError",
    "DomainError",
    "FactorizationError",
    "HoemuError",
    "KinematicsError",
    "OptimizationError",
    "SaturationError",
    "__version__",
]
