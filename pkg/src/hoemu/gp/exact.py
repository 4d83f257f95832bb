"""Exact Gaussian-process regression with a constant mean.

Several outputs that share the same inputs are handled as one batch: the
kernel matrices, factorizations and likelihood gradients are stacked along a
leading axis and each output's hyperparameters follow their own quasi-Newton
path (see :mod:`hoemu.gp.qn`).

Hyperparameters are fitted on the profiled likelihood. Writing the
covariance as ``s^2 (R_l + g I)`` with ``g = sigma^2 / s^2``, the optimal
mean constant ``c`` and signal variance ``s^2`` have closed forms for fixed
``(l, g)``, so the search runs over ``[log l_1..l_p, log g]`` only.
"""

import warnings

import numpy as np
import scipy.linalg

from .. import _backend
from ..errors import DomainError, FactorizationError
from .kernels import ARD_SE, FAMILIES, MATERN32, KernelSpec
from .qn import batched_bfgs

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
NOISE_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)
S2_FLOOR = 1e-12
LOG_G_BOUNDS = (np.log(1e-10), np.log(10.0))
LS_LOG_HALFWIDTH = 5.0
SQRT3 = np.sqrt(3.0)


def _n_ls(family, d):
    return d if family == ARD_SE else 1


def _correlation(family, X, D2, ls):
    """Unit-variance kernel matrices, shape (B, n, n)."""
    B = ls.shape[0]
    if family == ARD_SE:
        return _backend.ard_se_gram(X, 1.0 / ls**2, np.ones(B))
    u = SQRT3 * np.sqrt(D2)[None] / ls[:, :1, None]
    return (1.0 + u) * np.exp(-u)


def _robust_cholesky(C, scale):
    """Lower Cholesky factors of a (B, n, n) stack with per-matrix jitter escalation.

    Returns the factors and the jitter multiple of ``scale[b]`` used for each.
    """
    jitter = np.zeros(C.shape[0])
    try:
        return np.linalg.cholesky(C), jitter
    except np.linalg.LinAlgError:
        pass
    L = np.empty_like(C)
    idx = np.arange(C.shape[-1])
    for b in range(C.shape[0]):
        for jit in JITTERS:
            Cb = C[b].copy()
            Cb[idx, idx] += jit * scale[b]
            try:
                L[b] = np.linalg.cholesky(Cb)
            except np.linalg.LinAlgError:
                continue
            jitter[b] = jit
            break
        else:
            raise FactorizationError(f"covariance matrix not positive definite after jitter {JITTERS[-1]:g}")
    return L, jitter


def _cho_solve(L, R):
    """Solve ``L L^T x = r`` for each (L[b], R[b])."""
    out = np.empty_like(R)
    for b in range(L.shape[0]):
        out[b] = scipy.linalg.cho_solve((L[b], True), R[b], check_finite=False)
    return out


def profiled_nll(params, X, Y, family, D=None, grad=True):
    """Profiled negative log marginal likelihood of each output.

    Parameters
    ----------
    params : ndarray, shape (B, p + 1)
        Rows ``[log l_1..l_p, log g]``.
    X : ndarray, shape (n, d)
    Y : ndarray, shape (n, B)
    D : ndarray, shape (n, n), optional
        Pairwise input distances (Matern family); computed when omitted.

    Returns
    -------
    nll : ndarray, shape (B,)
        ``inf`` where the correlation matrix cannot be factorized.
    g : ndarray, shape (B, p + 1) or None
    c, s2 : ndarray, shape (B,)
        Profiled mean constant and signal variance.
    """
    if D is None and family == MATERN32:
        D = np.sqrt(_backend.sqdist(X, X))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    nll, g, c, s2, ok = _backend.profiled_nll(X, D, np.atleast_2d(params), Y, family == MATERN32, S2_FLOOR)
    nll = np.where(ok & np.isfinite(nll), nll, np.inf)
    return nll, (g if grad else None), c, s2


def neg_log_marginal_likelihood(X, Y, family, output_scale, lengthscales, mean_const, noise_std):
    """Plain negative log marginal likelihood for explicit hyperparameters.

    All hyperparameter arguments carry a leading output axis of length B;
    ``Y`` has shape (n, B).
    """
    n = X.shape[0]
    D2 = _backend.sqdist(X, X) if family == MATERN32 else None
    s2 = np.asarray(output_scale, float) ** 2
    C = s2[:, None, None] * _correlation(family, X, D2, np.asarray(lengthscales, float))
    idx = np.arange(n)
    C[:, idx, idx] += (np.asarray(noise_std, float) ** 2)[:, None]
    L, _ = _robust_cholesky(C, s2)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    r = Y.T - np.asarray(mean_const, float)[:, None]
    quad = np.einsum("bi,bi->b", r, _cho_solve(L, r))
    return 0.5 * quad + 0.5 * logdet + 0.5 * n * LOG_2PI


def collapse_duplicates(X, Y):
    """Average the outputs of repeated input rows (with a warning)."""
    uniq, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    if uniq.shape[0] == X.shape[0]:
        return X, Y
    warnings.warn(
        f"collapsed {X.shape[0] - uniq.shape[0]} duplicate training inputs", RuntimeWarning, stacklevel=3
    )
    inverse = inverse.ravel()
    Ysum = np.zeros((uniq.shape[0], Y.shape[1]))
    np.add.at(Ysum, inverse, Y)
    first = np.full(uniq.shape[0], X.shape[0])
    np.minimum.at(first, inverse, np.arange(X.shape[0]))
    order = np.argsort(first)
    return uniq[order], (Ysum / counts[:, None])[order]


class ExactGP:
    """Fitted GP with a cached Cholesky factorization of ``K + sigma^2 I``.

    One or more outputs share the inputs ``X``; per-output hyperparameters
    are held in arrays with a leading output axis. Predictions for a 1-D
    ``Y`` come back 1-D.
    """

    def __init__(self, X, Y, family, output_scale, lengthscales, mean_const, noise_std):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        self.squeeze = Y.ndim == 1
        Y = Y.reshape(X.shape[0], -1)
        if family not in FAMILIES:
            raise DomainError(f"unknown kernel family {family!r}")
        B = Y.shape[1]
        self.X, self.Y, self.family = X, Y, family
        self.output_scale = np.broadcast_to(np.asarray(output_scale, float), (B,)).copy()
        p = _n_ls(family, X.shape[1])
        self.lengthscales = np.broadcast_to(np.asarray(lengthscales, float), (B, p)).copy()
        self.mean_const = np.broadcast_to(np.asarray(mean_const, float), (B,)).copy()
        noise = np.broadcast_to(np.asarray(noise_std, float), (B,))
        self.noise_std = np.maximum(noise, NOISE_FLOOR)
        if np.any(self.output_scale <= 0) or np.any(self.lengthscales <= 0):
            raise DomainError("kernel hyperparameters must be strictly positive")
        self._factorize()

    @property
    def n_outputs(self):
        return self.Y.shape[1]

    def kernel(self, j=0):
        return KernelSpec(self.family, self.output_scale[j], tuple(self.lengthscales[j]))

    def _covariance(self):
        n = self.X.shape[0]
        D2 = _backend.sqdist(self.X, self.X) if self.family == MATERN32 else None
        s2 = self.output_scale**2
        C = s2[:, None, None] * _correlation(self.family, self.X, D2, self.lengthscales)
        idx = np.arange(n)
        C[:, idx, idx] += (self.noise_std**2)[:, None]
        return C

    def _factorize(self):
        self.L, self.jitter = _robust_cholesky(self._covariance(), self.output_scale**2)
        self.logdet = 2.0 * np.log(np.diagonal(self.L, axis1=1, axis2=2)).sum(axis=1)
        self.alpha = _cho_solve(self.L, self.Y.T - self.mean_const[:, None])

    def release_factor(self):
        """Drop the Cholesky factor; :meth:`predict` rebuilds it if a variance is requested."""
        self.L = None

    def _factor(self):
        if self.L is None:
            C = self._covariance()
            idx = np.arange(C.shape[-1])
            C[:, idx, idx] += (self.jitter * self.output_scale**2)[:, None]
            self.L = np.linalg.cholesky(C)
        return self.L

    def log_marginal_likelihood(self):
        """Per-output log marginal likelihood, shape (B,) (scalar if squeezed)."""
        n = self.X.shape[0]
        R = self.Y.T - self.mean_const[:, None]
        ll = -0.5 * np.einsum("bi,bi->b", R, self.alpha) - 0.5 * self.logdet - 0.5 * n * LOG_2PI
        return float(ll[0]) if self.squeeze else ll

    def _cross(self, Xq):
        s2 = self.output_scale**2
        if self.family == ARD_SE:
            return _backend.ard_se_cross(Xq, self.X, 1.0 / self.lengthscales**2, s2)
        u = SQRT3 * np.sqrt(_backend.sqdist(Xq, self.X))[None] / self.lengthscales[:, :1, None]
        return s2[:, None, None] * (1.0 + u) * np.exp(-u)

    def predict(self, Xq, return_var=True):
        """Posterior mean and latent variance at the rows of ``Xq``.

        Returns arrays of shape (m, B), or (m,) for a single-output model.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.X.shape[1]:
            raise DomainError(f"query has {Xq.shape[1]} columns, model expects {self.X.shape[1]}")
        Ks = self._cross(Xq)  # (B, m, n)
        mean = (self.mean_const[:, None] + np.einsum("bmn,bn->bm", Ks, self.alpha)).T
        var = None
        if return_var:
            L = self._factor()
            q = np.empty(Ks.shape[:2])
            for b in range(L.shape[0]):
                V = scipy.linalg.solve_triangular(L[b], Ks[b].T, lower=True, check_finite=False)
                q[b] = np.einsum("nm,nm->m", V, V)
            var = (self.output_scale[:, None] ** 2 - q).T
            floor = -1e-8 * self.output_scale[None, :] ** 2
            if np.any(var < floor):
                warnings.warn("negative predictive variance clamped to zero", RuntimeWarning, stacklevel=2)
            var = np.maximum(var, 0.0)
        if self.squeeze:
            mean = mean[:, 0]
            var = None if var is None else var[:, 0]
        return mean, var


class Standardizer:
    """Per-output affine map ``y -> (y - mu) / tau``."""

    def __init__(self, Y):
        self.mu = Y.mean(axis=0)
        tau = Y.std(axis=0)
        self.tau = np.where(tau > 0, tau, 1.0)

    def apply(self, Y):
        return (Y - self.mu) / self.tau


def _span(X):
    span = np.ptp(X, axis=0)
    return np.where(span > 0, span, 1.0)


def param_bounds(family, X):
    """Search box for ``[log l.., log g]``."""
    span = _span(X)
    log_span = np.log(span) if family == ARD_SE else np.log([span.max()])
    lo = np.concatenate([log_span - LS_LOG_HALFWIDTH, [LOG_G_BOUNDS[0]]])
    hi = np.concatenate([log_span + LS_LOG_HALFWIDTH, [LOG_G_BOUNDS[1]]])
    return lo, hi


def default_init(family, X, B, noise_init=1e-2):
    """Half-span lengthscales and noise ``noise_init`` relative to the output spread."""
    span = _span(X)
    ls = span / 2.0 if family == ARD_SE else np.array([span.max() / 2.0])
    row = np.concatenate([np.log(ls), [2.0 * np.log(noise_init)]])
    return np.tile(row, (B, 1))


def restart_inits(base, restarts, seed=0):
    """``base`` followed by ``restarts`` copies with lengthscales perturbed in log space."""
    rng = np.random.default_rng(seed)
    starts = [base]
    for _ in range(restarts):
        pert = base.copy()
        pert[:, :-1] += rng.normal(0.0, 0.7, size=pert[:, :-1].shape)
        starts.append(pert)
    return starts


def optimize_hyperparameters(X, Ystd, family, inits, maxiter=200, H0=None):
    """Quasi-Newton search from every start at once; keep the best per output.

    Each start's own initial value is a candidate too, so the returned
    profiled likelihood is never below that of any initialization.

    Returns
    -------
    best : ndarray, shape (B, p + 1)
    nll : ndarray, shape (B,)
    start_nll : ndarray, shape (S, B)
    H : ndarray, shape (B, p + 1, p + 1)
        Inverse-Hessian estimates at ``best``.
    """
    lo, hi = param_bounds(family, X)
    D = np.sqrt(_backend.sqdist(X, X)) if family == MATERN32 else None
    S = len(inits)
    B = Ystd.shape[1]
    x0 = np.clip(np.concatenate(inits, axis=0), lo, hi)
    Ystack = np.tile(Ystd, (1, S))

    def fun(P, rows):
        nll, g, _, _ = profiled_nll(P, X, Ystack[:, rows], family, D)
        return nll, g

    start_nll, _ = fun(x0, np.arange(S * B))
    if H0 is not None:
        H0 = np.tile(np.asarray(H0, dtype=float), (S, 1, 1))
    x, f, _, H = batched_bfgs(fun, x0, lo, hi, maxiter=maxiter, H0=H0)
    improved = np.isfinite(f) & (f <= start_nll)
    f = np.where(improved, f, start_nll)
    x = np.where(improved[:, None], x, x0)
    f = f.reshape(S, B)
    x = x.reshape(S, B, -1)
    H = H.reshape(S, B, *H.shape[1:])
    pick = np.argmin(f, axis=0)
    cols = np.arange(B)
    best_nll = f[pick, cols]
    if not np.all(np.isfinite(best_nll)):
        raise FactorizationError("no hyperparameter candidate could be factorized")
    return x[pick, cols], best_nll, start_nll.reshape(S, B), H[pick, cols]


def gp_fit(X, Y, family=ARD_SE, noise_init=1e-2, restarts=3, seed=0, init=None, maxiter=200, H0=None):
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Parameters
    ----------
    X : array_like, shape (n, d)
    Y : array_like, shape (n,) or (n, B)
    family : {"ard_se", "matern32"}
    noise_init : float
        Starting noise standard deviation relative to the signal scale.
    restarts : int
        Number of perturbed starts tried in addition to the base start.
    init : ndarray, optional
        (B, p + 1) starting rows ``[log l.., log g]`` replacing the default.
    H0 : ndarray, optional
        (B, p + 1, p + 1) inverse-Hessian estimates matching ``init``.

    Returns
    -------
    ExactGP
        With ``search_params`` (the optimized rows), ``search_H`` (their
        inverse-Hessian estimates) and ``start_nll`` (the standardized
        profiled objective at every start) attached.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    Y = Y.reshape(X.shape[0], -1)
    if X.shape[0] < 1:
        raise DomainError("need at least one training point")
    if family not in FAMILIES:
        raise DomainError(f"unknown kernel family {family!r}")
    X, Y = collapse_duplicates(X, Y)
    std = Standardizer(Y)
    Ystd = std.apply(Y)
    B = Y.shape[1]
    base = default_init(family, X, B, noise_init) if init is None else np.array(init, dtype=float, ndmin=2)
    if base.shape != (B, _n_ls(family, X.shape[1]) + 1):
        raise DomainError(f"init must have shape {(B, _n_ls(family, X.shape[1]) + 1)}, got {base.shape}")
    starts = restart_inits(base, restarts, seed)
    best, _, start_nll, H = optimize_hyperparameters(X, Ystd, family, starts, maxiter, H0)
    model = from_search_params(X, Y, family, best, std)
    model.squeeze = squeeze
    model.start_nll = start_nll
    model.search_H = H
    return model


def from_search_params(X, Y, family, params, std=None):
    """Build an :class:`ExactGP` from ``[log l.., log g]`` rows, profiling ``c`` and ``s``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    std = Standardizer(Y) if std is None else std
    params = np.atleast_2d(params)
    _, _, c, s2 = profiled_nll(params, X, std.apply(Y), family, grad=False)
    p = _n_ls(family, X.shape[1])
    s = np.sqrt(s2) * std.tau
    model = ExactGP(
        X, Y, family, s, np.exp(params[:, :p]), std.mu + std.tau * c, s * np.exp(0.5 * params[:, p])
    )
    model.search_params = params.copy()
    return model


def gp_predict(model, Xq, return_var=True):
    return model.predict(Xq, return_var)
