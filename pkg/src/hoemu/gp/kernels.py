"""Covariance functions: ARD squared exponential and isotropic Matern 3/2."""

from dataclasses import dataclass

import numpy as np

from .. import _backend
from ..errors import DomainError

ARD_SE = "ard_se"
MATERN32 = "matern32"
FAMILIES = (ARD_SE, MATERN32)
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with its output scale ``s`` and lengthscales."""

    family: str
    output_scale: float
    lengthscales: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.family == MATERN32 and len(ls) != 1:
            raise DomainError("the isotropic Matern kernel takes a single lengthscale")
        if not self.output_scale > 0 or not all(v > 0 for v in ls):
            raise DomainError("kernel hyperparameters must be strictly positive")

    @property
    def variance(self):
        return self.output_scale**2

    def _check_dim(self, d):
        if self.family == ARD_SE and len(self.lengthscales) != d:
            raise DomainError(f"input dimension {d} does not match {len(self.lengthscales)} lengthscales")

    def cross(self, X, Z):
        """Covariance matrix between the rows of ``X`` and ``Z``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if X.shape[1] != Z.shape[1]:
            raise DomainError("input dimensions differ")
        self._check_dim(X.shape[1])
        if self.family == ARD_SE:
            inv_ls2 = 1.0 / np.square(self.lengthscales)
            return _backend.ard_se_cross(X, Z, inv_ls2, self.variance)[0]
        return _backend.matern32(_backend.sqdist(X, Z), 1.0 / self.lengthscales[0], self.variance)

    def gram(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_dim(X.shape[1])
        if self.family == ARD_SE:
            inv_ls2 = 1.0 / np.square(self.lengthscales)
            return _backend.ard_se_gram(X, inv_ls2, self.variance)[0]
        D2 = _backend.sqdist(X, X)
        return _backend.matern32(D2, 1.0 / self.lengthscales[0], self.variance)


def kernel_eval(spec, x, x2):
    """Scalar covariance ``k(x, x2)``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    return float(spec.cross(x, x2)[0, 0])


def is_psd(K, rtol=1e-8):
    """Symmetric and minimum eigenvalue >= ``-rtol * trace``."""
    K = np.asarray(K)
    if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
        return False
    return np.linalg.eigvalsh(K).min() >= -rtol * np.trace(K)
