"""Time the compiled kernels against the numpy fallback.

Run as ``python3 benchmarks/bench_backends.py [--repeat N]``. Both
implementations are imported directly, so the comparison does not depend
on ``HOEMU_BACKEND``. Each row reports the best-of-N time per call and the
largest absolute difference between the two results.
"""

import argparse
import time

import numpy as np

from hoemu import _kernels_py

try:
    from hoemu import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    fin = np.isfinite(a) & np.isfinite(b)
    return float(np.abs(a[fin] - b[fin]).max()) if fin.any() else 0.0


def cases(rng):
    X = np.ascontiguousarray(rng.uniform(0.1, 5.0, (100, 4)))
    big = np.ascontiguousarray(rng.uniform(0.1, 5.0, (10000, 4)))
    Y = np.ascontiguousarray(rng.standard_normal((100, 25)))
    P = np.ascontiguousarray(np.column_stack([np.log(np.full((25, 4), 2.0)), np.full(25, np.log(1e-4))]))
    D = np.ascontiguousarray(np.sqrt(_kernels_py.sqdist(X, X)))
    Pm = np.ascontiguousarray(np.column_stack([np.full(25, np.log(3.0)), np.full(25, np.log(1e-4))]))
    inv = np.ascontiguousarray(np.full((25, 4), 0.25))
    s2 = np.ones(25)
    K = _kernels_py.ard_se_gram(X, inv, s2)
    C = np.ascontiguousarray(K + 1e-4 * np.eye(100))
    q = np.ascontiguousarray(big[17] + 0.01)
    return [
        ("sqdist 100x10000", lambda m: m.sqdist(X, big)),
        ("ard_se_gram 25x100x100", lambda m: m.ard_se_gram(X, inv, s2)),
        ("chol_inv 25x100x100", lambda m: m.chol_inv(C)[0]),
        ("knn k=100 of 10000", lambda m: np.sort(m.knn(big, q, 100))),
        ("profiled_nll ARD 25 outputs", lambda m: m.profiled_nll(X, np.zeros((1, 1)), P, Y, False, 1e-12)[:4]),
        ("profiled_nll Matern 25 outputs", lambda m: m.profiled_nll(X, D, Pm, Y, True, 1e-12)[:4]),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension unavailable; build with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, call in cases(rng):
        tc, oc = best_time(lambda: call(_kernels), args.repeat)
        tp, op = best_time(lambda: call(_kernels_py), args.repeat)
        print(f"{name:<32} {1e3 * tc:>10.3f} {1e3 * tp:>10.3f} {tp / tc:>8.1f} {_max_diff(oc, op):>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
