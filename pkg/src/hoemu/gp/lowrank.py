"""Low-rank GP regression from a truncated kernel eigendecomposition.

The latent function is a sum of blocks, each a GP with an isotropic Matern
3/2 kernel on a transformed input: the parameters themselves (``"theta"``)
or their componentwise reciprocals (``"tau"``). Each block kernel is
approximated from a random subsample ``Z`` of ``n_r`` inputs through its
top-``k`` eigenpairs ``U_k D_k U_k^T``, which yields the Nystrom features
``phi(x) = k(x, Z) U_k D_k^(-1/2)``. With weights ``w_b ~ N(0, v_b I)`` the
model for each output is::

    y = beta + sum_b phi_b(x) w_b + eps,   eps ~ N(0, sigma^2)

The block variances are ``v_theta = s^2`` and ``v_tau = r s^2``. For each
candidate ratio ``r`` the training covariance is diagonalized once, after
which ``beta``, ``s^2`` and ``sigma^2`` are fitted per output at O(rank)
cost per likelihood evaluation.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh

from .. import _backend
from ..errors import DomainError
from .qn import batched_bfgs

BLOCKS = ("theta", "tau")
RATIO_GRID = tuple(10.0**e for e in range(-3, 4))
EIG_RTOL = 1e-10
GRAM_RTOL = 1e-12
# (log s^2, log sigma^2) search box in standardized output units
LOG_S2_BOUNDS = (np.log(1e-8), np.log(1e4))
LOG_N2_BOUNDS = (np.log(1e-12), np.log(10.0))
LANCZOS_FRACTION = 0.25


def reciprocal(theta):
    """Componentwise ``1 / theta``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise DomainError("reciprocal inputs need strictly positive parameters")
    return 1.0 / theta


def _transform(block, X):
    if block == "theta":
        return np.asarray(X, dtype=float)
    if block == "tau":
        return reciprocal(X)
    raise DomainError(f"unknown basis block {block!r}; choose from {BLOCKS}")


def truncated_eig(K, k, tol=1e-10):
    """Top-``k`` eigenpairs of a symmetric matrix, eigenvalues descending.

    Small ranks use implicitly restarted Lanczos (``tol``, at most ``10 k``
    restarts); ranks above a quarter of the matrix size use a dense solver
    restricted to the wanted index range.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"rank k={k} must lie in [1, {n}]")
    if k >= LANCZOS_FRACTION * n or n < 16:
        D, U = scipy.linalg.eigh(K, subset_by_index=[n - k, n - 1])
    else:
        D, U = eigsh(K, k=k, which="LA", tol=tol, maxiter=10 * k)
    order = np.argsort(D)[::-1]
    return D[order], U[:, order]


@dataclass
class BasisBlock:
    name: str
    Z: np.ndarray  # transformed subsample, (n_r, d)
    lengthscale: float
    D: np.ndarray  # retained eigenvalues, descending
    U: np.ndarray  # (n_r, k)

    @property
    def rank(self):
        return self.D.size

    def cross(self, X):
        Xb = _transform(self.name, X)
        return _backend.matern32(_backend.sqdist(Xb, self.Z), 1.0 / self.lengthscale, 1.0)

    def features(self, X):
        return self.cross(X) @ (self.U / np.sqrt(self.D))


def build_block(name, Xsub, k, tol=1e-10):
    """Eigen-basis of one block on the subsample ``Xsub``."""
    Z = np.ascontiguousarray(_transform(name, Xsub))
    D2 = _backend.sqdist(Z, Z)
    lam = float(np.sqrt(D2.max()))
    if not lam > 0:
        raise DomainError("subsample inputs are all identical; lengthscale undefined")
    K = _backend.matern32(D2, 1.0 / lam, 1.0)
    D, U = truncated_eig(K, k, tol)
    keep = D > EIG_RTOL * D[0]
    if not keep.all():
        warnings.warn(
            f"{name} block: kernel rank {keep.sum()} below requested k={k}; rank reduced",
            RuntimeWarning,
            stacklevel=3,
        )
        D, U = D[keep], U[:, keep]
    return BasisBlock(name, Z, lam, D, U)


class LowRankBasis:
    """Feature blocks and per-ratio diagonalizations on a training design.

    Depends only on the inputs, so one basis serves every output column and
    every refit against new targets on the same design.
    """

    def __init__(self, X, n_r=2000, k=2000, blocks=BLOCKS, seed=0, ratios=None, tol=1e-10):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N = X.shape[0]
        if not 1 <= k <= n_r <= N:
            raise DomainError(f"need 1 <= k <= n_r <= N, got k={k}, n_r={n_r}, N={N}")
        blocks = tuple(blocks)
        if not blocks or len(set(blocks)) != len(blocks) or any(b not in BLOCKS for b in blocks):
            raise DomainError(f"blocks must be distinct names from {BLOCKS}")
        self.X = X
        self.n_r, self.k, self.blocks, self.seed = n_r, k, blocks, seed
        if n_r == N:
            self.subsample = np.arange(N)
        else:
            self.subsample = np.sort(np.random.default_rng(seed).choice(N, n_r, replace=False))
        Xsub = X[self.subsample]
        self.block_list = [build_block(name, Xsub, k, tol) for name in blocks]
        self.Phi = [b.features(X) for b in self.block_list]
        if ratios is None:
            ratios = RATIO_GRID if len(blocks) > 1 else (1.0,)
        self.ratios = tuple(float(r) for r in ratios)
        self._spectra = {}

    @classmethod
    def from_components(cls, X, subsample, blocks, lengthscales, eigvals, eigvecs, k, seed=0, ratios=None):
        """Rebuild a basis from stored eigenpairs without re-solving the eigenproblem."""
        self = cls.__new__(cls)
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.subsample = np.asarray(subsample, dtype=int)
        self.n_r, self.k, self.blocks, self.seed = self.subsample.size, int(k), tuple(blocks), seed
        Xsub = self.X[self.subsample]
        self.block_list = [
            BasisBlock(name, np.ascontiguousarray(_transform(name, Xsub)), float(lam), np.asarray(D), np.asarray(U))
            for name, lam, D, U in zip(self.blocks, lengthscales, eigvals, eigvecs)
        ]
        self.Phi = [b.features(self.X) for b in self.block_list]
        if ratios is None:
            ratios = RATIO_GRID if len(self.blocks) > 1 else (1.0,)
        self.ratios = tuple(float(r) for r in ratios)
        self._spectra = {}
        return self

    @property
    def n_features(self):
        return sum(b.rank for b in self.block_list)

    def scales(self, ratio):
        """Per-feature prior variance multipliers for block ratio ``ratio``."""
        parts = [np.full(b.rank, 1.0 if i == 0 else ratio) for i, b in enumerate(self.block_list)]
        return np.concatenate(parts)

    def features(self, X):
        return np.hstack([b.features(X) for b in self.block_list])

    def spectrum(self, ratio):
        """Orthonormal ``Q`` and eigenvalues ``E`` of ``Phi_r Phi_r^T`` (nonzero part)."""
        if ratio in self._spectra:
            return self._spectra[ratio]
        Phi_r = np.hstack(self.Phi) * np.sqrt(self.scales(ratio))
        N, M = Phi_r.shape
        if N <= M:
            E, Q = np.linalg.eigh(Phi_r @ Phi_r.T)
        else:
            E, V = np.linalg.eigh(Phi_r.T @ Phi_r)
        keep = E > GRAM_RTOL * max(E.max(), 0.0)
        E = E[keep][::-1]
        if N <= M:
            Q = Q[:, keep][:, ::-1]
        else:
            V = V[:, keep][:, ::-1]
            Q = Phi_r @ (V / np.sqrt(E))
        self._spectra[ratio] = (Q, E)
        return Q, E


def _complement(Q, v, a):
    # part of v orthogonal to span(Q); exactly zero when Q spans everything,
    # where the subtraction would only leave rounding noise
    if Q.shape[1] == Q.shape[0]:
        return np.zeros_like(v)
    return v - Q @ a


def _lr_nll(P, stats, N, grad=True):
    """Profiled-in-beta NLL of each row; ``P`` holds ``[log s^2, log sigma^2]``."""
    E, ay, a1, Eyy, Ey1, E11 = stats
    s2 = np.exp(P[:, 0])[:, None]
    n2 = np.exp(P[:, 1])
    d = n2[:, None] + s2 * E
    one_c_one = E11 / n2 + np.sum(a1 * a1 / d, axis=1)
    one_c_y = Ey1 / n2 + np.sum(a1 * ay / d, axis=1)
    beta = one_c_y / one_c_one
    ar = ay - beta[:, None] * a1
    er2 = np.maximum(Eyy - 2.0 * beta * Ey1 + beta**2 * E11, 0.0)
    quad = er2 / n2 + np.sum(ar * ar / d, axis=1)
    m = E.shape[1]
    logdet = (N - m) * np.log(n2) + np.sum(np.log(d), axis=1)
    nll = 0.5 * quad + 0.5 * logdet + 0.5 * N * np.log(2 * np.pi)
    if not grad:
        return nll, None, beta
    ad = ar / d
    g = np.empty_like(P)
    g[:, 0] = 0.5 * np.sum(s2 * E / d, axis=1) - 0.5 * np.sum(s2 * E * ad * ad, axis=1)
    tr = (N - m) / n2 + np.sum(1.0 / d, axis=1)
    bb = er2 / n2**2 + np.sum(ad * ad, axis=1)
    g[:, 1] = 0.5 * n2 * (tr - bb)
    return nll, g, beta


class LowRankGP:
    """Fitted low-rank GP for one or more outputs on a shared basis.

    Attributes ``beta``, ``signal_var``, ``noise_var`` and ``ratio`` hold the
    per-output fitted values in raw units; ``weights[b]`` is the (n_r, B)
    matrix mapping block ``b`` kernel evaluations to the predictive mean.
    """

    def __init__(self, basis, Y, beta, signal_var, noise_var, ratio, coef, squeeze=False):
        self.basis = basis
        self.Y = Y
        self.beta, self.signal_var, self.noise_var, self.ratio = beta, signal_var, noise_var, ratio
        self.coef = coef  # posterior feature means, (M, B)
        self.squeeze = squeeze
        self.weights = []
        start = 0
        for b in basis.block_list:
            stop = start + b.rank
            self.weights.append((b.U / np.sqrt(b.D)) @ coef[start:stop])
            start = stop
        self._post = {}

    @property
    def n_outputs(self):
        return self.beta.size

    @property
    def rank(self):
        return self.basis.n_features

    def _posterior_factor(self, j):
        # feature-space posterior covariance / signal_var for output j:
        # S^(1/2) (I + (s2/n2) Phi_r^T Phi_r)^-1 S^(1/2), held as (V, w)
        key = (self.ratio[j], self.signal_var[j], self.noise_var[j])
        if key not in self._post:
            Q, E = self.basis.spectrum(self.ratio[j])
            sc = np.sqrt(self.basis.scales(self.ratio[j]))
            Phi_r = np.hstack(self.basis.Phi) * sc
            V = (Phi_r.T @ Q) / np.sqrt(E)
            shrink = 1.0 / (1.0 + E * self.signal_var[j] / self.noise_var[j])
            self._post[key] = (V, shrink, sc)
        return self._post[key]

    def predict(self, Xq, return_var=True):
        """Posterior mean and latent variance at the rows of ``Xq``.

        Returns arrays of shape (m, B), or (m,) for a single-output model.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.basis.X.shape[1]:
            raise DomainError(f"query has {Xq.shape[1]} columns, model expects {self.basis.X.shape[1]}")
        mean = np.tile(self.beta, (Xq.shape[0], 1))
        crosses = [b.cross(Xq) for b in self.basis.block_list]
        for Kc, W in zip(crosses, self.weights):
            mean += Kc @ W
        var = None
        if return_var:
            phi = np.hstack([Kc @ (b.U / np.sqrt(b.D)) for Kc, b in zip(crosses, self.basis.block_list)])
            var = np.empty_like(mean)
            for j in range(self.n_outputs):
                V, shrink, sc = self._posterior_factor(j)
                proj = (phi * sc) @ V
                # prior variance of the exact block kernels; the part of it
                # outside the feature span stays unexplained (as in DTC)
                prior = 1.0 + self.ratio[j] * (len(self.basis.block_list) - 1)
                explained = np.einsum("ij,ij->i", proj, proj)
                var[:, j] = self.signal_var[j] * (prior - explained + proj**2 @ shrink)
            var = np.maximum(var, 0.0)
        if self.squeeze:
            mean = mean[:, 0]
            var = None if var is None else var[:, 0]
        return mean, var


def lowrank_fit(X, Y, n_r=2000, k=2000, blocks=BLOCKS, seed=0, basis=None, maxiter=200):
    """Fit a low-rank GP to each output column.

    Parameters
    ----------
    X : array_like, shape (N, d)
    Y : array_like, shape (N,) or (N, B)
    n_r, k : int
        Subsample size and retained rank per block.
    blocks : sequence of {"theta", "tau"}
    basis : LowRankBasis, optional
        Prebuilt basis on the same ``X``; ``n_r``, ``k``, ``blocks`` and
        ``seed`` are then taken from it.

    Returns
    -------
    LowRankGP
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    Y = Y.reshape(X.shape[0], -1)
    if basis is None:
        basis = LowRankBasis(X, n_r, k, blocks, seed)
    elif basis.X.shape != X.shape or not np.array_equal(basis.X, X):
        raise DomainError("basis was built on different inputs")
    N, B = Y.shape
    mu = Y.mean(axis=0)
    tau = Y.std(axis=0)
    tau = np.where(tau > 0, tau, 1.0)
    Ys = (Y - mu) / tau
    ones = np.ones(N)
    lo = np.array([LOG_S2_BOUNDS[0], LOG_N2_BOUNDS[0]])
    hi = np.array([LOG_S2_BOUNDS[1], LOG_N2_BOUNDS[1]])
    best = None
    for ratio in basis.ratios:
        Q, E = basis.spectrum(ratio)
        ay = (Q.T @ Ys).T  # (B, m)
        a1 = Q.T @ ones
        ey, e1 = _complement(Q, Ys, ay.T), _complement(Q, ones, a1)
        stats = (
            np.tile(E, (B, 1)),
            ay,
            np.tile(a1, (B, 1)),
            np.einsum("nb,nb->b", ey, ey),
            ey.T @ e1,
            np.full(B, e1 @ e1),
        )

        def fun(P, rows, stats=stats):
            sub = tuple(s[rows] for s in stats)
            nll, g, _ = _lr_nll(P, sub, N)
            return nll, g

        x0 = np.tile([0.0, np.log(1e-4)], (B, 1))
        x, f, _, _ = batched_bfgs(fun, x0, lo, hi, maxiter=maxiter)
        _, _, beta = _lr_nll(x, stats, N, grad=False)
        if best is None:
            best = {"f": f, "x": x, "beta": beta, "ratio": np.full(B, ratio)}
        else:
            better = f < best["f"]
            best["f"] = np.where(better, f, best["f"])
            best["x"][better] = x[better]
            best["beta"] = np.where(better, beta, best["beta"])
            best["ratio"] = np.where(better, ratio, best["ratio"])
    s2 = np.exp(best["x"][:, 0])
    n2 = np.exp(best["x"][:, 1])
    beta_s = best["beta"]
    coef = np.empty((basis.n_features, B))
    Phi = np.hstack(basis.Phi)
    for ratio in np.unique(best["ratio"]):
        cols = np.nonzero(best["ratio"] == ratio)[0]
        Q, E = basis.spectrum(ratio)
        rho = Ys[:, cols] - beta_s[cols]
        a = Q.T @ rho
        d = n2[cols] + s2[cols] * E[:, None]
        cinv_rho = _complement(Q, rho, a) / n2[cols] + Q @ (a / d)
        coef[:, cols] = s2[cols] * basis.scales(ratio)[:, None] * (Phi.T @ cinv_rho)
    # back to raw units: the mean and coefficients scale with tau
    return LowRankGP(
        basis,
        Y,
        beta=mu + tau * beta_s,
        signal_var=s2 * tau**2,
        noise_var=n2 * tau**2,
        ratio=best["ratio"],
        coef=coef * tau,
        squeeze=squeeze,
    )


def lowrank_predict(model, Xq, return_var=True):
    return model.predict(Xq, return_var)


@dataclass(frozen=True)
class LowRankConfig:
    """Subsample size, rank, basis blocks and subsample seed."""

    n_r: int = 2000
    k: int = 2000
    blocks: tuple = BLOCKS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not 1 <= self.k <= self.n_r:
            raise DomainError(f"need 1 <= k <= n_r, got k={self.k}, n_r={self.n_r}")
        if not self.blocks or any(b not in BLOCKS for b in self.blocks):
            raise DomainError(f"blocks must be names from {BLOCKS}")

    def for_size(self, N):
        """This configuration with ``n_r`` and ``k`` capped at ``N`` (warning when capped)."""
        if self.n_r <= N:
            return self
        warnings.warn(f"subsample size n_r={self.n_r} capped at N={N}", RuntimeWarning, stacklevel=2)
        return LowRankConfig(N, min(self.k, N), self.blocks, self.seed)

    def build_basis(self, X):
        return LowRankBasis(X, self.n_r, self.k, self.blocks, self.seed)
