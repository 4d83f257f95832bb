"""Surrogate-loss minimization over the parameter box and Hessian-based UQ.

Two multi-start strategies are provided. ``global-search`` scores a Sobol
scatter, runs a bounded quasi-Newton solver (L-BFGS-B) from the best trial
points and skips starts inside the basins of optima already found, in two
stages. ``cg-multistart`` runs projected Polak-Ribiere conjugate gradients
from Sobol starts in lockstep. Both use central finite-difference gradients.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import material
from .design import SobolGenerator
from .errors import DomainError, OptimizationError

GLOBAL_SEARCH = "global-search"
CG_MULTISTART = "cg-multistart"
STRATEGIES = (GLOBAL_SEARCH, CG_MULTISTART)


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start optimizer settings.

    ``trial_points`` and ``stage_one_points`` drive global search, ``starts``
    the CG multistart. ``local_runs`` caps the local-solver runs per global
    search stage. Finite-difference steps are relative to the box width.
    ``seed`` offsets the Sobol stream used for trial points and starts.
    """

    strategy: str = GLOBAL_SEARCH
    trial_points: int = 2000
    stage_one_points: int = 400
    starts: int = 50
    maxiter: int = 100
    local_runs: int = 10
    lo: tuple = (material.THETA_LO,) * material.N_THETA
    hi: tuple = (material.THETA_HI,) * material.N_THETA
    fd_step: float = 1e-6
    ftol: float = 1e-12
    gtol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.ravel(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.ravel(self.hi)))
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        for name in ("trial_points", "stage_one_points", "starts", "maxiter", "local_runs"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.stage_one_points > self.trial_points:
            raise DomainError("stage_one_points cannot exceed trial_points")
        if len(self.lo) != len(self.hi) or not np.all(np.array(self.lo) < np.array(self.hi)):
            raise DomainError("bounds need lo < hi in every coordinate")
        if not self.fd_step > 0 or self.seed < 0:
            raise DomainError("fd_step must be positive and seed non-negative")

    @property
    def bounds(self):
        return np.array(self.lo), np.array(self.hi)

    @property
    def dim(self):
        return len(self.lo)


@dataclass
class LocalOptimum:
    value: float
    point: np.ndarray
    start_index: int
    start: np.ndarray
    stage: int = 1
    nit: int = 0
    message: str = ""


@dataclass
class InferenceResult:
    """Best point, every local optimum and (once computed) the curvature.

    ``optima`` are sorted by value. ``diagnostics`` holds ``n_evals``,
    ``wall_time`` and per-strategy counters; ``failures`` lists local runs
    that raised, as ``(start_index, reason)``.
    """

    theta: np.ndarray
    loss: float
    optima: list
    strategy: str
    hessian: np.ndarray = None
    covariance: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def with_uncertainty(self, loss, step=1e-3, lo=None, hi=None):
        """Attach the finite-difference Hessian at ``theta`` and its (repaired) inverse."""
        H = hessian_at(loss, self.theta, step, lo, hi)
        self.hessian = H
        self.covariance = np.linalg.inv(nearest_pd(H, quiet=True))
        return self

    def record(self):
        """Plain-data summary for structured output.

        Wall-clock timings are left out so the record of a seeded run is
        reproducible byte for byte.
        """
        return {
            "theta": self.theta,
            "loss": self.loss,
            "strategy": self.strategy,
            "hessian": self.hessian,
            "covariance": self.covariance,
            "optima": [
                {"value": o.value, "point": o.point, "start_index": o.start_index, "stage": o.stage, "nit": o.nit}
                for o in self.optima
            ],
            "failures": [{"start_index": i, "reason": r} for i, r in self.failures],
            "diagnostics": {k: v for k, v in self.diagnostics.items() if k != "wall_time"},
        }


class _Counted:
    """Batched view of a loss callable with an evaluation counter."""

    def __init__(self, loss):
        self.loss = loss
        self.n_evals = 0

    def many(self, X):
        X = np.atleast_2d(X)
        self.n_evals += X.shape[0]
        if hasattr(self.loss, "many"):
            f = np.asarray(self.loss.many(X), dtype=float).reshape(-1)
        else:
            f = np.array([float(self.loss(x)) for x in X])
        return f

    def __call__(self, x):
        return float(self.many(np.asarray(x, dtype=float)[None])[0])


def _fd_steps(x, h, lo, hi):
    # per-coordinate stencil offsets (+, -) kept inside the box; a side that
    # would leave the box is replaced by the centre (one-sided difference)
    up = np.minimum(x + h, hi) - x
    down = x - np.maximum(x - h, lo)
    return up, down


def fd_gradient_many(F, X, h, lo, hi):
    """Central-difference gradients at each row of ``X`` in one batched call.

    On a bound the difference falls back to one-sided. Returns ``(f, G)``.
    """
    X = np.atleast_2d(X)
    m, d = X.shape
    up, down = _fd_steps(X, h, lo, hi)
    eye = np.eye(d)
    pts = np.concatenate([X[:, None, :], X[:, None, :] + up[:, :, None] * eye, X[:, None, :] - down[:, :, None] * eye], axis=1)
    vals = F(pts.reshape(-1, d)).reshape(m, 1 + 2 * d)
    f0, fp, fm = vals[:, 0], vals[:, 1 : 1 + d], vals[:, 1 + d :]
    G = (fp - fm) / (up + down)
    return f0, G


SEED_STRIDE = 2**20


def _sobol_box(n, lo, hi, seed):
    # each seed reads its own block of the sequence; the origin is skipped
    gen = SobolGenerator(lo.size, skip=1)
    U = gen.points(1 + seed * SEED_STRIDE, n)
    return lo + U * (hi - lo)


def _finish(best_x, best_f, optima, strategy, F, t0, extra, failures):
    optima.sort(key=lambda o: (o.value, o.start_index))
    diagnostics = {"n_evals": F.n_evals, "wall_time": time.perf_counter() - t0, "n_local_runs": len(optima)}
    diagnostics.update(extra)
    return InferenceResult(np.array(best_x), float(best_f), optima, strategy, diagnostics=diagnostics, failures=failures)


def _local_solve(F, x0, lo, hi, h, config):
    def fun(x):
        f, g = fd_gradient_many(F.many, x[None], h, lo, hi)
        return float(f[0]), g[0]

    res = scipy.optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"maxiter": config.maxiter, "ftol": config.ftol, "gtol": config.gtol},
    )
    if not np.isfinite(res.fun):
        raise OptimizationError(f"local solver ended on a non-finite loss ({res.message})")
    return np.clip(res.x, lo, hi), float(res.fun), int(res.nit), str(res.message)


def in_basin(x, optima):
    """True when ``x`` lies inside the basin sphere of any optimum in ``optima``.

    A basin is the sphere centred on the optimum whose radius is the
    distance from that run's start to the optimum.
    """
    for o in optima:
        radius = np.linalg.norm(o.start - o.point)
        if np.linalg.norm(x - o.point) <= radius:
            return True
    return False


def minimize_global_search(loss, config=None):
    """Two-stage scatter-and-solve minimization of ``loss`` over the box.

    Stage one scores the first ``stage_one_points`` Sobol trial points and
    runs the local solver from the best of them in ascending score order;
    stage two does the same with the remaining trial points. Starts inside
    an existing basin sphere are skipped. At most ``local_runs`` runs are
    made per stage. The returned point is the best among the local optima
    and all scored trial points.
    """
    config = OptimizerConfig() if config is None else config
    t0 = time.perf_counter()
    lo, hi = config.bounds
    h = config.fd_step * (hi - lo)
    F = _Counted(loss)
    trial = _sobol_box(config.trial_points, lo, hi, config.seed)
    stages = [np.arange(config.stage_one_points), np.arange(config.stage_one_points, config.trial_points)]
    optima, failures = [], []
    best_trial_f, best_trial_x = np.inf, None
    skipped = 0
    for stage, idx in enumerate(stages, start=1):
        if idx.size == 0:
            continue
        scores = F.many(trial[idx])
        ok = np.isfinite(scores)
        if np.any(ok):
            j = np.nonzero(ok)[0][np.argmin(scores[ok])]
            if scores[j] < best_trial_f:
                best_trial_f, best_trial_x = float(scores[j]), trial[idx[j]]
        order = np.argsort(np.where(ok, scores, np.inf), kind="stable")
        runs = 0
        for o in order:
            if runs >= config.local_runs or not ok[o]:
                break
            x0 = trial[idx[o]]
            if in_basin(x0, optima):
                skipped += 1
                continue
            runs += 1
            try:
                x, f, nit, msg = _local_solve(F, x0, lo, hi, h, config)
            except (OptimizationError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
                failures.append((int(idx[o]), str(exc)))
                continue
            optima.append(LocalOptimum(f, x, int(idx[o]), x0.copy(), stage, nit, msg))
    if not optima and best_trial_x is None:
        raise OptimizationError("every trial point and local run failed")
    best = min(optima, key=lambda o: o.value) if optima else None
    if best is not None and best.value <= best_trial_f:
        bx, bf, source = best.point, best.value, "local"
    else:
        bx, bf, source = best_trial_x, best_trial_f, "trial"
    extra = {"skipped_in_basin": skipped, "best_source": source, "n_failed": len(failures)}
    return _finish(bx, bf, optima, GLOBAL_SEARCH, F, t0, extra, failures)


def _project_grad(x, g, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def minimize_cg_multistart(loss, config=None):
    """Projected Polak-Ribiere CG from ``starts`` Sobol points, best kept.

    All starts advance together so each iteration needs one batched loss
    call for the gradients and one per backtracking step. Iterates are
    projected onto the box; a start stops at ``maxiter`` iterations, when
    its line search fails, or when its loss decrease falls below ``ftol``.
    """
    config = OptimizerConfig(strategy=CG_MULTISTART) if config is None else config
    t0 = time.perf_counter()
    lo, hi = config.bounds
    width = hi - lo
    h = config.fd_step * width
    F = _Counted(loss)
    X = _sobol_box(config.starts, lo, hi, config.seed)
    starts = X.copy()
    S = X.shape[0]
    f, G = fd_gradient_many(F.many, X, h, lo, hi)
    failures = []
    alive = np.isfinite(f) & np.all(np.isfinite(G), axis=1)
    for i in np.nonzero(~alive)[0]:
        failures.append((int(i), "non-finite loss or gradient at the start"))
    nit = np.zeros(S, dtype=int)
    pg = _project_grad(X, G, lo, hi)
    D = -pg
    step = np.full(S, 0.1)
    pg_prev = pg.copy()
    for it in range(config.maxiter):
        act = np.nonzero(alive)[0]
        if act.size == 0:
            break
        small = np.abs(pg[act]).max(axis=1) <= config.gtol * (1.0 + np.abs(f[act]))
        alive[act[small]] = False
        act = act[~small]
        if act.size == 0:
            break
        if it > 0:
            num = np.einsum("ij,ij->i", pg[act], pg[act] - pg_prev[act])
            den = np.einsum("ij,ij->i", pg_prev[act], pg_prev[act])
            beta = np.maximum(0.0, np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0))
            D[act] = -pg[act] + beta[:, None] * D[act]
        # keep the direction inside the feasible cone and descending
        D[act] = _project_grad(X[act], -D[act], lo, hi) * -1.0
        slope = np.einsum("ij,ij->i", G[act], D[act])
        reset = slope >= 0
        D[act[reset]] = -pg[act[reset]]
        # first trial step moves the largest coordinate by `step` box widths
        scale = np.abs(D[act] / width).max(axis=1)
        alpha = step[act] / np.maximum(scale, 1e-300)
        pending = np.arange(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        x_new = X[act].copy()
        f_new = f[act].copy()
        for _bt in range(30):
            rows = act[pending]
            trial = np.clip(X[rows] + alpha[pending, None] * D[rows], lo, hi)
            ft = F.many(trial)
            dec = np.einsum("ij,ij->i", G[rows], trial - X[rows])
            ok = np.isfinite(ft) & (ft <= f[rows] + 1e-4 * dec) & (dec < 0)
            x_new[pending[ok]] = trial[ok]
            f_new[pending[ok]] = ft[ok]
            accepted[pending[ok]] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5
        alive[act[~accepted]] = False
        acc = act[accepted]
        if acc.size == 0:
            break
        moved = np.abs(x_new[accepted] - X[acc]).max(axis=1) / width.max()
        flat = np.abs(f[acc] - f_new[accepted]) <= config.ftol * (1.0 + np.abs(f[acc]))
        step[acc] = np.clip(2.0 * moved, 1e-8, 0.5)
        X[acc] = x_new[accepted]
        pg_prev[acc] = pg[acc]
        f_acc, G_acc = fd_gradient_many(F.many, X[acc], h, lo, hi)
        f[acc], G[acc] = f_acc, G_acc
        pg[acc] = _project_grad(X[acc], G_acc, lo, hi)
        nit[acc] += 1
        alive[acc[flat]] = False
        bad = ~(np.isfinite(f_acc) & np.all(np.isfinite(G_acc), axis=1))
        for i in acc[bad]:
            failures.append((int(i), "non-finite loss or gradient during the run"))
        alive[acc[bad]] = False
    failed = {i for i, _ in failures}
    optima = [
        LocalOptimum(float(f[i]), X[i].copy(), i, starts[i], 1, int(nit[i]), "")
        for i in range(S)
        if i not in failed and np.isfinite(f[i])
    ]
    if not optima:
        raise OptimizationError("every CG start failed")
    best = min(optima, key=lambda o: (o.value, o.start_index))
    extra = {"n_failed": len(failures), "max_iterations": int(nit.max())}
    return _finish(best.point, best.value, optima, CG_MULTISTART, F, t0, extra, failures)


def minimize(loss, config=None):
    """Dispatch on ``config.strategy``."""
    config = OptimizerConfig() if config is None else config
    if config.strategy == GLOBAL_SEARCH:
        return minimize_global_search(loss, config)
    return minimize_cg_multistart(loss, config)


def hessian_at(loss, theta, step=1e-3, lo=None, hi=None):
    """Finite-difference Hessian of ``loss`` at ``theta``, symmetrized.

    Steps are ``step`` times the box width per coordinate. Central second
    differences are used; where the stencil would leave the box it is
    shifted inward by one step (a one-sided difference) with a warning.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    d = theta.size
    lo = np.full(d, material.THETA_LO) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(d, material.THETA_HI) if hi is None else np.asarray(hi, dtype=float)
    if not step > 0:
        raise DomainError(f"step must be positive, got {step!r}")
    h = step * (hi - lo)
    centre = theta.copy()
    low, high = theta - h < lo, theta + h > hi
    centre[low] += h[low]
    centre[high] -= h[high]
    if np.any(low | high):
        warnings.warn(
            f"Hessian point on or near the boundary in coordinates {np.nonzero(low | high)[0].tolist()}; "
            "using one-sided differences",
            RuntimeWarning,
            stacklevel=2,
        )
    E = np.diag(h)
    pts = [centre]
    for i in range(d):
        pts += [centre + E[i], centre - E[i]]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        pts += [centre + E[i] + E[j], centre + E[i] - E[j], centre - E[i] + E[j], centre - E[i] - E[j]]
    vals = _Counted(loss).many(np.array(pts))
    f0 = vals[0]
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (vals[1 + 2 * i] - 2.0 * f0 + vals[2 + 2 * i]) / h[i] ** 2
    base = 1 + 2 * d
    for n, (i, j) in enumerate(pairs):
        fpp, fpm, fmp, fmm = vals[base + 4 * n : base + 4 * n + 4]
        H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        raise OptimizationError("Hessian has non-finite entries")
    return 0.5 * (H + H.T)


def nearest_pd(H, rel_floor=1e-6, quiet=False):
    """``H`` with eigenvalues clipped below at ``rel_floor`` times its trace.

    Returns ``H`` unchanged (symmetrized) when it is already positive
    definite; otherwise warns unless ``quiet``.
    """
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    w, V = np.linalg.eigh(H)
    if w.min() > 0:
        return H
    floor = rel_floor * abs(np.trace(H))
    if not floor > 0:
        floor = rel_floor
    if not quiet:
        warnings.warn("Hessian is not positive definite; eigenvalues clipped", RuntimeWarning, stacklevel=2)
    w = np.maximum(w, floor)
    return (V * w) @ V.T


@dataclass
class UQSample:
    samples: np.ndarray
    n_clipped: int
    repaired: bool


def uq_sample(theta, H, n_samples, seed=0, lo=None, hi=None):
    """Draws from ``N(theta, H^-1)`` clipped to the box.

    A non-positive-definite ``H`` is repaired by eigenvalue clipping first.
    ``n_clipped`` counts draws that had at least one coordinate clipped.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    d = theta.size
    if n_samples < 0:
        raise DomainError("n_samples must be non-negative")
    lo = np.full(d, material.THETA_LO) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(d, material.THETA_HI) if hi is None else np.asarray(hi, dtype=float)
    H = np.asarray(H, dtype=float)
    if H.shape != (d, d):
        raise DomainError(f"Hessian shape {H.shape} does not match dimension {d}")
    Hpd = nearest_pd(H)
    repaired = Hpd is not H and not np.array_equal(Hpd, 0.5 * (H + H.T))
    w, V = np.linalg.eigh(Hpd)
    root = V / np.sqrt(w)  # root @ root.T = H^-1
    z = np.random.default_rng(seed).standard_normal((n_samples, d))
    raw = theta + z @ root.T
    samples = np.clip(raw, lo, hi)
    n_clipped = int(np.any(samples != raw, axis=1).sum())
    return UQSample(samples, n_clipped, bool(repaired))


@dataclass
class CurveBands:
    stretches: np.ndarray
    point: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_clipped: int

    def rows(self):
        """``(lambda, sigma, ci_lower, ci_upper)`` per stretch, ``sigma`` at the estimate."""
        return list(zip(self.stretches, self.point, self.lower, self.upper))


def curve_confidence_bands(theta, H, direction="fibre", stretches=None, n_samples=1000, level=0.95, seed=0):
    """Per-stretch empirical quantile bands of the stress curve under ``N(theta, H^-1)``.

    Each draw is pushed through the stretch-stress curve; the band at each
    stretch is the central ``level`` interval of the sampled stresses.
    """
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level!r}")
    lams = material.default_stretch_grid() if stretches is None else np.asarray(stretches, dtype=float)
    point = np.array([s for _, s in material.stretch_stress_curve(theta, direction, lams)])
    draw = uq_sample(theta, H, n_samples, seed)
    curves = np.array([[s for _, s in material.stretch_stress_curve(t, direction, lams)] for t in draw.samples])
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(curves, [tail, 1.0 - tail], axis=0)
    return CurveBands(lams, point, curves.mean(axis=0), lower, upper, draw.n_clipped)
