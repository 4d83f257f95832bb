"""Vectorized box-constrained BFGS over a stack of independent problems.

Each row of the parameter array is its own minimization problem with its
own inverse-Hessian estimate and its own backtracking line search; only the
objective evaluation is shared, so one call of ``fun`` serves every row that
is still active.
"""

import numpy as np


def batched_bfgs(fun, x0, lo, hi, maxiter=100, gtol=1e-5, ftol=1e-8, max_backtracks=8, H0=None):
    """Minimize ``fun`` row by row.

    Parameters
    ----------
    fun : callable
        ``fun(X, rows) -> (f, G)`` evaluates the problems listed in ``rows``
        at the parameter rows ``X`` (shape ``(len(rows), P)``).
    x0 : ndarray, shape (B, P)
    lo, hi : ndarray, shape (P,)
        Box bounds shared by all rows.
    max_backtracks : int
        Step halvings before a row is declared converged; near-singular
        kernel matrices make the objective noisy at tiny steps.
    H0 : ndarray, shape (B, P, P), optional
        Starting inverse-Hessian estimates (identity with a scaled first
        step when omitted).

    Returns
    -------
    x : ndarray, shape (B, P)
    f : ndarray, shape (B,)
    nit : ndarray of int, shape (B,)
    H : ndarray, shape (B, P, P)
        Final inverse-Hessian estimates, reusable as ``H0``.
    """
    x = np.clip(np.array(x0, dtype=float), lo, hi)
    B, P = x.shape
    rows = np.arange(B)
    f, g = fun(x, rows)
    warm = H0 is not None
    H = np.array(H0, dtype=float) if warm else np.tile(np.eye(P), (B, 1, 1))
    nit = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)

    def projected(xa, ga):
        pg = ga.copy()
        pg[(xa <= lo) & (ga > 0)] = 0.0
        pg[(xa >= hi) & (ga < 0)] = 0.0
        return pg

    for _ in range(maxiter):
        pg = projected(x, g)
        conv = np.abs(pg).max(axis=1) <= gtol * (1.0 + np.abs(f))
        active &= ~conv
        act = np.nonzero(active)[0]
        if act.size == 0:
            break
        xa, ga = x[act], g[act]
        # variables held at a bound by their gradient are frozen; the step
        # uses the inverse-Hessian block of the free variables only
        free = ~(((xa <= lo) & (ga > 0)) | ((xa >= hi) & (ga < 0)))
        Hf = H[act] * free[:, :, None] * free[:, None, :]
        d = -np.einsum("bij,bj->bi", Hf, ga * free)
        slope = np.einsum("bi,bi->b", ga, d)
        bad = slope >= 0
        if np.any(bad):
            H[act[bad]] = np.eye(P)
            d[bad] = -projected(xa[bad], ga[bad])
            slope[bad] = np.einsum("bi,bi->b", ga[bad], d[bad])
        # predicted decrease below the objective's resolution: converged
        flat = -slope <= ftol * (1.0 + np.abs(f[act]))
        if np.any(flat):
            active[act[flat]] = False
            keep = ~flat
            act, xa, ga, d, slope = act[keep], xa[keep], ga[keep], d[keep], slope[keep]
            if act.size == 0:
                break
        first = (nit[act] == 0) & (not warm)
        step = np.ones(act.size)
        big = np.abs(d).max(axis=1)
        step[first] = np.minimum(1.0, 0.5 / np.maximum(big[first], 1e-300))
        pending = np.arange(act.size)
        x_new = xa.copy()
        f_new = f[act].copy()
        g_new = ga.copy()
        accepted = np.zeros(act.size, dtype=bool)
        for _bt in range(max_backtracks):
            trial = np.clip(xa[pending] + step[pending, None] * d[pending], lo, hi)
            ft, gt = fun(trial, act[pending])
            dec = np.einsum("bi,bi->b", ga[pending], trial - xa[pending])
            ok = np.isfinite(ft) & (ft <= f[act[pending]] + 1e-4 * dec)
            idx = pending[ok]
            x_new[idx], f_new[idx], g_new[idx] = trial[ok], ft[ok], gt[ok]
            accepted[idx] = True
            # quadratic-interpolation backtracking, step cut to [0.1, 0.5] of itself
            rej = pending[~ok]
            if rej.size == 0:
                break
            a = step[rej]
            slope_r = slope[rej]
            excess = ft[~ok] - f[act[rej]] - slope_r * a
            with np.errstate(divide="ignore", invalid="ignore"):
                a_q = -slope_r * a * a / (2.0 * excess)
            a_q = np.where(np.isfinite(a_q), a_q, 0.1 * a)
            step[rej] = np.clip(a_q, 0.1 * a, 0.5 * a)
            pending = rej
        # rows whose line search failed are finished
        active[act[~accepted]] = False
        acc = np.nonzero(accepted)[0]
        if acc.size == 0:
            break
        ia = act[acc]
        s = x_new[acc] - x[ia]
        yv = g_new[acc] - g[ia]
        small = np.abs(f[ia] - f_new[acc]) <= ftol * (1.0 + np.abs(f[ia]))
        x[ia], f[ia], g[ia] = x_new[acc], f_new[acc], g_new[acc]
        nit[ia] += 1
        active[ia[small]] = False
        sy = np.einsum("bi,bi->b", s, yv)
        upd = sy > 1e-12 * np.linalg.norm(s, axis=1) * np.linalg.norm(yv, axis=1)
        for b, sb, yb, syb in zip(ia[upd], s[upd], yv[upd], sy[upd]):
            Hb = H[b]
            if nit[b] == 1 and not warm:
                Hb = np.eye(P) * (syb / (yb @ yb))
            rho = 1.0 / syb
            V = np.eye(P) - rho * np.outer(sb, yb)
            H[b] = V @ Hb @ V.T + rho * np.outer(sb, sb)
    return x, f, nit, H
