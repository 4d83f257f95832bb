"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`HoemuError` so the CLI can map it onto an exit code.
"""

import numpy as np


class HoemuError(Exception):
    """Base class for package errors."""

    exit_code = 4


class DomainError(HoemuError, ValueError):
    """An input lies outside the admissible domain (box bounds, stretch < 1, ...)."""

    exit_code = 2


class KinematicsError(HoemuError, ValueError):
    """Deformation gradient is not orientation preserving."""


class SaturationError(HoemuError, ArithmeticError):
    """An exponential term of the strain energy would overflow."""


class FactorizationError(HoemuError, np.linalg.LinAlgError):
    """A covariance matrix could not be factorized even after adding jitter."""


class DataError(HoemuError, ValueError):
    """A data file is malformed or violates the dataset schema."""

    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(HoemuError, ValueError):
    """Invalid configuration value."""

    exit_code = 2


class OptimizationError(HoemuError, RuntimeError):
    """Every local solver run failed."""
