"""Local GP prediction from the K nearest training inputs.

Each query selects its K nearest neighbours (Euclidean, ties to the lower
index), fits a fresh GP on them and predicts. Fits are memoized by
neighbour set: queries that share a neighbourhood, such as the points of a
finite-difference stencil, reuse one fit.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .. import _backend
from ..errors import DomainError
from .exact import gp_fit
from .kernels import ARD_SE, FAMILIES

INIT_MODES = ("pilot", "previous", "default")


@dataclass(frozen=True)
class LocalGPConfig:
    """Settings for :class:`LocalGP`.

    ``init`` chooses the hyperparameter starting point of each local fit:

    * ``"pilot"``: one multi-start fit on the neighbourhood of the design
      centroid, reused as the single start of every local fit. Fits are pure
      functions of the neighbour set.
    * ``"previous"``: warm start from the most recent local fit.
    * ``"default"``: the standard starts of :func:`~hoemu.gp.exact.gp_fit`
      with ``restarts`` perturbed copies.
    """

    k: int = 100
    family: str = ARD_SE
    init: str = "pilot"
    restarts: int = 3
    noise_init: float = 1e-2
    seed: int = 0
    maxiter: int = 200
    cache_size: int = 2048

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"neighbour count must be >= 1, got {self.k}")
        if self.init not in INIT_MODES:
            raise DomainError(f"unknown init mode {self.init!r}; choose from {INIT_MODES}")
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if self.restarts < 0 or self.cache_size < 0 or self.maxiter < 1:
            raise DomainError("restarts and cache_size must be >= 0 and maxiter >= 1")


class LocalGP:
    """Nearest-neighbour GP predictor over a fixed training set.

    Parameters
    ----------
    X : array_like, shape (N, d)
    Y : array_like, shape (N,) or (N, B)
        All B output columns share the neighbourhoods and are fitted as one
        batch.
    config : LocalGPConfig
    """

    def __init__(self, X, Y, config=None):
        self.config = LocalGPConfig() if config is None else config
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        Y = np.asarray(Y, dtype=float)
        self.squeeze = Y.ndim == 1
        self.X = X
        self.Y = Y.reshape(X.shape[0], -1)
        if self.config.k > X.shape[0]:
            raise DomainError(f"K={self.config.k} exceeds the {X.shape[0]} training points")
        self._cache = OrderedDict()
        self._lock = threading.Lock()
        self._pilot = None
        self._previous = None
        self.hits = 0
        self.misses = 0

    @property
    def n_outputs(self):
        return self.Y.shape[1]

    def neighbours(self, x):
        """Sorted indices of the K nearest training inputs to ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.X.shape[1]:
            raise DomainError(f"query has {x.size} components, model expects {self.X.shape[1]}")
        return np.sort(_backend.knn(self.X, x, self.config.k))

    def _pilot_start(self):
        if self._pilot is None:
            idx = self.neighbours(self.X.mean(axis=0))
            cfg = self.config
            model = gp_fit(
                self.X[idx], self.Y[idx], cfg.family, cfg.noise_init, cfg.restarts, cfg.seed, maxiter=cfg.maxiter
            )
            self._pilot = model.search_params
        return self._pilot

    def _fit(self, idx):
        cfg = self.config
        Xn, Yn = self.X[idx], self.Y[idx]
        if cfg.init == "default":
            return gp_fit(Xn, Yn, cfg.family, cfg.noise_init, cfg.restarts, cfg.seed, maxiter=cfg.maxiter)
        if cfg.init == "pilot":
            start = self._pilot_start()
            return gp_fit(Xn, Yn, cfg.family, cfg.noise_init, 0, cfg.seed, init=start, maxiter=cfg.maxiter)
        start = self._previous
        if start is None:
            model = gp_fit(Xn, Yn, cfg.family, cfg.noise_init, cfg.restarts, cfg.seed, maxiter=cfg.maxiter)
        else:
            model = gp_fit(Xn, Yn, cfg.family, cfg.noise_init, 0, cfg.seed, init=start, maxiter=cfg.maxiter)
        self._previous = model.search_params
        return model

    def model_for(self, x):
        """The fitted local model serving query ``x``."""
        idx = self.neighbours(x)
        key = idx.tobytes()
        with self._lock:
            model = self._cache.get(key)
            if model is not None:
                self._cache.move_to_end(key)
                self.hits += 1
                return model
            self.misses += 1
            if self.config.init == "pilot":
                self._pilot_start()
        model = self._fit(idx)
        model.release_factor()  # the mean needs only alpha
        with self._lock:
            if self.config.cache_size:
                self._cache[key] = model
                while len(self._cache) > self.config.cache_size:
                    self._cache.popitem(last=False)
        return model

    def predict(self, Xq, return_var=True):
        """Mean and variance at each query row.

        Returns arrays of shape (m, B), or (m,) for single-output data.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        means = np.empty((Xq.shape[0], self.n_outputs))
        var = np.empty_like(means) if return_var else None
        for i, x in enumerate(Xq):
            mu, v = self.model_for(x).predict(x[None], return_var)
            means[i] = mu.ravel()
            if return_var:
                var[i] = v.ravel()
        if self.squeeze:
            means = means[:, 0]
            var = None if var is None else var[:, 0]
        return means, var

    def clear_cache(self):
        with self._lock:
            self._cache.clear()


def local_gp_predict(X, y, xq, config=None):
    """One-shot local GP prediction at the rows of ``xq``."""
    return LocalGP(X, y, config).predict(xq)
