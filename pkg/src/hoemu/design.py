"""Unscrambled Sobol sequences and scaling onto the parameter box.

Direction numbers are the Joe-Kuo ``new-joe-kuo-6.21201`` values for the
first ten dimensions. Points are produced in Gray-code order, so point ``i``
equals the XOR of the direction numbers selected by the bits of
``i ^ (i >> 1)``; any index range can be generated directly.
"""

import numpy as np

from .errors import DomainError
from .material import N_THETA, THETA_HI, THETA_LO

# (s, a, m_1..m_s) for dimensions 2..10; dimension 1 is the van der Corput sequence.
JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
)
MAX_DIM = len(JOE_KUO) + 1
BITS = 52


def direction_numbers(dim, bits=BITS):
    """Integer direction numbers ``V[j, k]`` scaled by ``2**bits``."""
    if dim < 1 or dim > MAX_DIM:
        raise DomainError(f"Sobol dimension {dim} not in [1, {MAX_DIM}]")
    V = np.zeros((dim, bits), dtype=np.uint64)
    for k in range(bits):
        V[0, k] = 1 << (bits - 1 - k)
    for j in range(1, dim):
        s, a, m = JOE_KUO[j - 1]
        v = [0] * bits
        for k in range(min(s, bits)):
            v[k] = m[k] << (bits - 1 - k)
        for k in range(s, bits):
            new = v[k - s] ^ (v[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= v[k - i]
            v[k] = new
        V[j] = v
    return V


class SobolGenerator:
    """Stateful stream over an unscrambled Sobol sequence.

    Parameters
    ----------
    dim : int
        Number of coordinates, at most ``MAX_DIM``.
    skip : int
        Index of the first point returned by :meth:`next`. The default 1
        drops the origin.
    """

    def __init__(self, dim, skip=1):
        self.dim = dim
        self._V = direction_numbers(dim)
        if skip < 0:
            raise DomainError("skip must be non-negative")
        self.index = skip

    def points(self, start, n):
        """Points ``start .. start + n - 1`` without touching the stream state."""
        if n < 0 or start < 0:
            raise DomainError("start and n must be non-negative")
        if start + n >= 2**BITS:
            raise DomainError("index range exceeds generator capacity")
        idx = np.arange(start, start + n, dtype=np.uint64)
        gray = idx ^ (idx >> np.uint64(1))
        X = np.zeros((n, self.dim), dtype=np.uint64)
        for k in range(BITS):
            sel = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            if not sel.any():
                if (np.uint64(1) << np.uint64(k)) > gray.max(initial=np.uint64(0)):
                    break
                continue
            X[sel] ^= self._V[:, k]
        return X.astype(np.float64) / float(2**BITS)

    def next(self, n):
        out = self.points(self.index, n)
        self.index += n
        return out


def sobol_points(dim, n, skip=1):
    """``n`` Sobol points in ``[0, 1)**dim`` starting at index ``skip``."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return SobolGenerator(dim, skip).points(skip, n)


def scale_to_box(points, lo=THETA_LO, hi=THETA_HI):
    """Affine map ``lo + u (hi - lo)`` applied coordinatewise."""
    points = np.asarray(points, dtype=float)
    return lo + points * (hi - lo)


def extend_design(n_existing, m, dim=N_THETA, skip=1, lo=THETA_LO, hi=THETA_HI):
    """The ``m`` box-scaled points that follow the first ``n_existing`` ones."""
    if m == 0:
        return np.empty((0, dim))
    gen = SobolGenerator(dim, skip)
    return scale_to_box(gen.points(skip + n_existing, m), lo, hi)


def training_design(n, dim=N_THETA, skip=1, lo=THETA_LO, hi=THETA_HI):
    return scale_to_box(sobol_points(dim, n, skip), lo, hi)
