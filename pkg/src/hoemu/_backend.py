"""Select the kernel implementation at import time.

The compiled Cython module is used when it imports; ``HOEMU_BACKEND=python``
forces the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

NAME = "python"
_impl = _kernels_py

if os.environ.get("HOEMU_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        NAME = "cython"
    except ImportError:
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sqdist(X, Z):
    return _impl.sqdist(_c(X), _c(Z))


def ard_se_gram(X, inv_ls2, s2):
    return _impl.ard_se_gram(_c(X), _c(np.atleast_2d(inv_ls2)), _c(np.atleast_1d(s2)))


def ard_se_cross(X, Z, inv_ls2, s2):
    return _impl.ard_se_cross(_c(X), _c(Z), _c(np.atleast_2d(inv_ls2)), _c(np.atleast_1d(s2)))


def ard_se_grad(X, K, W, inv_ls2):
    return _impl.ard_se_grad(_c(X), _c(K), _c(W), _c(np.atleast_2d(inv_ls2)))


def matern32(D2, inv_ls, s2):
    return _impl.matern32(_c(D2), float(inv_ls), float(s2))


def knn(X, x, k):
    return _impl.knn(_c(X), _c(x), int(k))


def chol_inv(C):
    return _impl.chol_inv(_c(C))


def profiled_nll(X, D, P, Y, matern, s2_floor):
    X = _c(X)
    D = _c(D) if D is not None else np.zeros((1, 1))
    return _impl.profiled_nll(X, D, _c(P), _c(Y), bool(matern), float(s2_floor))
