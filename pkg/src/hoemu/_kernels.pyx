# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the GP hot loop.

Same signatures and semantics as ``hoemu._kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt
from scipy.linalg.cython_lapack cimport dpotrf, dpotri

cnp.import_array()


def sqdist(const double[:, ::1] X, const double[:, ::1] Z):
    cdef Py_ssize_t n = X.shape[0], m = Z.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                t = X[i, k] - Z[j, k]
                acc += t * t
            o[i, j] = acc
    return out


def ard_se_gram(const double[:, ::1] X, const double[:, ::1] inv_ls2, const double[::1] s2):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], B = inv_ls2.shape[0]
    cdef Py_ssize_t b, i, j, k
    cdef double acc, t, v
    out = np.empty((B, n, n))
    cdef double[:, :, ::1] o = out
    for b in range(B):
        for i in range(n):
            o[b, i, i] = s2[b]
            for j in range(i):
                acc = 0.0
                for k in range(d):
                    t = X[i, k] - X[j, k]
                    acc += t * t * inv_ls2[b, k]
                v = s2[b] * exp(-0.5 * acc)
                o[b, i, j] = v
                o[b, j, i] = v
    return out


def ard_se_cross(const double[:, ::1] X, const double[:, ::1] Z,
                 const double[:, ::1] inv_ls2, const double[::1] s2):
    cdef Py_ssize_t n = X.shape[0], m = Z.shape[0], d = X.shape[1], B = inv_ls2.shape[0]
    cdef Py_ssize_t b, i, j, k
    cdef double acc, t
    out = np.empty((B, n, m))
    cdef double[:, :, ::1] o = out
    for b in range(B):
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = X[i, k] - Z[j, k]
                    acc += t * t * inv_ls2[b, k]
                o[b, i, j] = s2[b] * exp(-0.5 * acc)
    return out


def ard_se_grad(const double[:, ::1] X, const double[:, :, ::1] K,
                const double[:, :, ::1] W, const double[:, ::1] inv_ls2):
    """``G[b, k] = sum_ij W[b,i,j] K[b,i,j] (x_ik - x_jk)**2 inv_ls2[b,k]``."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], B = K.shape[0]
    cdef Py_ssize_t b, i, j, k
    cdef double wk, t
    out = np.zeros((B, d))
    cdef double[:, ::1] g = out
    for b in range(B):
        for i in range(n):
            for j in range(i):
                wk = 2.0 * W[b, i, j] * K[b, i, j]
                for k in range(d):
                    t = X[i, k] - X[j, k]
                    g[b, k] += wk * t * t
        for k in range(d):
            g[b, k] *= inv_ls2[b, k]
    return out


def matern32(const double[:, ::1] D2, double inv_ls, double s2):
    cdef Py_ssize_t n = D2.shape[0], m = D2.shape[1]
    cdef Py_ssize_t i, j
    cdef double u
    cdef double c = sqrt(3.0) * inv_ls
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            u = c * sqrt(D2[i, j])
            o[i, j] = s2 * (1.0 + u) * exp(-u)
    return out


def knn(const double[:, ::1] X, const double[::1] x, Py_ssize_t k):
    """Indices of the ``k`` rows nearest ``x``, ordered by (distance, index)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, t
    d2 = np.empty(n)
    cdef double[::1] dv = d2
    for i in range(n):
        acc = 0.0
        for j in range(d):
            t = X[i, j] - x[j]
            acc += t * t
        dv[i] = acc
    if k >= n:
        return np.lexsort((np.arange(n), d2))[:k]
    part = np.argpartition(d2, k - 1)[:k]
    thresh = d2[part].max()
    cand = np.nonzero(d2 <= thresh)[0]
    order = np.lexsort((cand, d2[cand]))
    return cand[order[:k]]


def chol_inv(const double[:, :, ::1] C):
    """Inverse and log-determinant of each SPD matrix in a (B, n, n) stack.

    Returns ``(Cinv, logdet, ok)``; entries with ``ok[b] == False`` failed
    the Cholesky factorization and hold garbage.
    """
    cdef Py_ssize_t B = C.shape[0], b, i, j
    cdef int n = <int>C.shape[1], info = 0
    cdef char uplo = b'L'
    out = np.array(C, copy=True)
    logdet = np.zeros(B)
    ok = np.ones(B, dtype=bool)
    cdef double[:, :, ::1] o = out
    cdef double[::1] ld = logdet
    cdef double acc
    for b in range(B):
        dpotrf(&uplo, &n, &o[b, 0, 0], &n, &info)
        if info != 0:
            ok[b] = False
            continue
        acc = 0.0
        for i in range(n):
            acc += log(o[b, i, i])
        ld[b] = 2.0 * acc
        dpotri(&uplo, &n, &o[b, 0, 0], &n, &info)
        if info != 0:
            ok[b] = False
            continue
        # column-major lower triangle == row-major upper triangle
        for i in range(n):
            for j in range(i):
                o[b, i, j] = o[b, j, i]
    return out, logdet, ok


def profiled_nll(const double[:, ::1] X, const double[:, ::1] D,
                 const double[:, ::1] P, const double[:, ::1] Y,
                 bint matern, double s2_floor):
    """Profiled negative log marginal likelihood and its gradient, per column of ``Y``.

    ``P`` rows are ``[log l_1..l_p, log g]``; ``D`` holds pairwise distances
    (used by the Matern family only). Returns ``(nll, G, c, s2, ok)``.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], B = P.shape[0]
    cdef Py_ssize_t p = 1 if matern else d
    cdef Py_ssize_t b, i, j, k
    cdef int ni = <int>n, info = 0
    cdef char uplo = b'L'
    cdef double gn, acc, t, rk, u, w, wk, denom, c, q, s2, tr, e
    cdef double sqrt3 = sqrt(3.0)
    Kbuf = np.empty((n, n))
    Abuf = np.empty((n, n))
    cdef double[:, ::1] K = Kbuf
    cdef double[:, ::1] A = Abuf
    cdef double[::1] inv_ls2 = np.empty(d)
    cdef double[::1] rows = np.empty(n)
    cdef double[::1] r = np.empty(n)
    cdef double[::1] alpha = np.empty(n)
    cdef double[::1] gacc = np.empty(d)
    nll_o = np.full(B, np.inf)
    G_o = np.zeros((B, p + 1))
    c_o = np.zeros(B)
    s2_o = np.zeros(B)
    ok_o = np.ones(B, dtype=bool)
    cdef double[::1] nll_v = nll_o, c_v = c_o, s2_v = s2_o
    cdef double[:, ::1] G = G_o
    cdef double log2pi = log(2.0 * 3.141592653589793)
    for b in range(B):
        for k in range(p):
            inv_ls2[k] = exp(-2.0 * P[b, k])
        gn = exp(P[b, p])
        for i in range(n):
            K[i, i] = 1.0
            A[i, i] = 1.0 + gn
            for j in range(i):
                if matern:
                    u = sqrt3 * D[i, j] * sqrt(inv_ls2[0])
                    rk = (1.0 + u) * exp(-u)
                else:
                    acc = 0.0
                    for k in range(d):
                        t = X[i, k] - X[j, k]
                        acc += t * t * inv_ls2[k]
                    rk = exp(-0.5 * acc)
                K[i, j] = rk
                K[j, i] = rk
                A[i, j] = rk
                A[j, i] = rk
        dpotrf(&uplo, &ni, &A[0, 0], &ni, &info)
        if info != 0:
            ok_o[b] = False
            continue
        acc = 0.0
        for i in range(n):
            acc += log(A[i, i])
        e = 2.0 * acc
        dpotri(&uplo, &ni, &A[0, 0], &ni, &info)
        if info != 0:
            ok_o[b] = False
            continue
        for i in range(n):
            for j in range(i):
                A[i, j] = A[j, i]
        denom = 0.0
        c = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += A[i, j]
            rows[i] = acc
            denom += acc
            c += acc * Y[i, b]
        c /= denom
        for i in range(n):
            r[i] = Y[i, b] - c
        q = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += A[i, j] * r[j]
            alpha[i] = acc
            q += acc * r[i]
        s2 = q / n
        if s2 < s2_floor:
            s2 = s2_floor
        c_v[b] = c
        s2_v[b] = s2
        nll_v[b] = 0.5 * n * log(s2) + 0.5 * e + 0.5 * n * (1.0 + log2pi)
        for k in range(p):
            gacc[k] = 0.0
        tr = 0.0
        for i in range(n):
            tr += 0.5 * (alpha[i] * alpha[i] / s2 - A[i, i])
            for j in range(i):
                w = alpha[i] * alpha[j] / s2 - A[i, j]
                if matern:
                    u = sqrt3 * D[i, j] * sqrt(inv_ls2[0])
                    gacc[0] += w * u * u * exp(-u)
                else:
                    wk = w * K[i, j]
                    for k in range(d):
                        t = X[i, k] - X[j, k]
                        gacc[k] += wk * t * t
        for k in range(p):
            G[b, k] = -gacc[k] if matern else -gacc[k] * inv_ls2[k]
        G[b, p] = -gn * tr
    return nll_o, G_o, c_o, s2_o, ok_o
