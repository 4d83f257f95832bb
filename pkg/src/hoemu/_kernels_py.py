"""Numpy implementation of the GP hot-loop kernels.

Used when the compiled ``hoemu._kernels`` module is unavailable, and as the
reference the compiled module is tested against.
"""

import numpy as np
from scipy.linalg import lapack


def sqdist(X, Z):
    diff = X[:, None, :] - Z[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def ard_se_gram(X, inv_ls2, s2):
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    q = np.einsum("ijk,bk->bij", diff2, inv_ls2)
    K = s2[:, None, None] * np.exp(-0.5 * q)
    idx = np.arange(X.shape[0])
    K[:, idx, idx] = s2[:, None]
    return K


def ard_se_cross(X, Z, inv_ls2, s2):
    diff2 = (X[:, None, :] - Z[None, :, :]) ** 2
    q = np.einsum("ijk,bk->bij", diff2, inv_ls2)
    return s2[:, None, None] * np.exp(-0.5 * q)


def ard_se_grad(X, K, W, inv_ls2):
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    return np.einsum("bij,ijk->bk", W * K, diff2) * inv_ls2


def matern32(D2, inv_ls, s2):
    u = np.sqrt(3.0) * inv_ls * np.sqrt(D2)
    return s2 * (1.0 + u) * np.exp(-u)


def knn(X, x, k):
    diff = X - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    n = X.shape[0]
    if k >= n:
        return np.lexsort((np.arange(n), d2))[:k]
    part = np.argpartition(d2, k - 1)[:k]
    thresh = d2[part].max()
    cand = np.nonzero(d2 <= thresh)[0]
    order = np.lexsort((cand, d2[cand]))
    return cand[order[:k]]


def chol_inv(C):
    B, n, _ = C.shape
    out = np.empty_like(C)
    logdet = np.zeros(B)
    ok = np.ones(B, dtype=bool)
    for b in range(B):
        L, info = lapack.dpotrf(C[b], lower=1)
        if info != 0:
            ok[b] = False
            continue
        logdet[b] = 2.0 * np.log(np.diag(L)).sum()
        inv, info = lapack.dpotri(L, lower=1)
        if info != 0:
            ok[b] = False
            continue
        out[b] = np.tril(inv) + np.tril(inv, -1).T
    return out, logdet, ok


def profiled_nll(X, D, P, Y, matern, s2_floor):
    n, d = X.shape
    p = 1 if matern else d
    ls = np.exp(P[:, :p])
    gn = np.exp(P[:, p])
    if matern:
        u = np.sqrt(3.0) * D[None] / ls[:, :1, None]
        RK = (1.0 + u) * np.exp(-u)
    else:
        RK = ard_se_gram(X, 1.0 / ls**2, np.ones(P.shape[0]))
    R = RK.copy()
    idx = np.arange(n)
    R[:, idx, idx] += gn[:, None]
    Rinv, logdet, ok = chol_inv(R)
    one_r = Rinv.sum(axis=2)
    c = np.einsum("bi,ib->b", one_r, Y) / one_r.sum(axis=1)
    r = Y.T - c[:, None]
    alpha = np.einsum("bij,bj->bi", Rinv, r)
    s2 = np.maximum(np.einsum("bi,bi->b", r, alpha) / n, s2_floor)
    nll = 0.5 * n * np.log(s2) + 0.5 * logdet + 0.5 * n * (1.0 + np.log(2 * np.pi))
    W = 0.5 * (alpha[:, :, None] * alpha[:, None, :] / s2[:, None, None] - Rinv)
    G = np.empty_like(P)
    if matern:
        G[:, 0] = -np.einsum("bij,bij->b", W, u**2 * np.exp(-u))
    else:
        G[:, :p] = -ard_se_grad(X, RK, W, 1.0 / ls**2)
    G[:, p] = -gn * np.trace(W, axis1=1, axis2=2)
    nll = np.where(ok, nll, np.inf)
    G[~ok] = 0.0
    c[~ok] = 0.0
    s2[~ok] = 0.0
    return nll, G, c, s2, ok
