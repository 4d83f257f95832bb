"""Forward models mapping scale factors to 25 observable outputs.

The analytic simulator runs a fixed protocol of 24 homogeneous deformation
cases through the constitutive law. Outputs 1-24 are the stress component
conjugate to each case; output 25 is the strain energy summed over all cases.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import material
from .errors import DataError, DomainError, HoemuError
from .io import atomic_write_text

N_OUTPUTS = 25
N_COLUMNS = material.N_THETA + N_OUTPUTS

_AXES = {"f": material.FIBRE, "s": material.SHEET, "n": material.NORMAL}
SHEAR_MODES = ("fs", "fn", "sf", "sn", "nf", "ns")
STRETCH_MODES = ("f", "s", "n")


@dataclass(frozen=True)
class DeformationCase:
    """One homogeneous loading case.

    ``mode`` is a two-letter shear mode ``"ab"`` (``F = I + gamma a (x) b``,
    reported stress ``sigma_ab``) or a single axis letter for isochoric
    uniaxial stretch (reported stress ``sigma_aa``).
    """

    mode: str
    magnitude: float

    def __post_init__(self):
        if self.mode in SHEAR_MODES:
            return
        if self.mode in STRETCH_MODES:
            if self.magnitude < 1.0:
                raise DomainError(f"stretch {self.magnitude:g} below 1 in case {self.mode}")
            return
        raise DomainError(f"unknown deformation mode {self.mode!r}")

    @property
    def is_shear(self):
        return len(self.mode) == 2

    def gradient(self):
        if self.is_shear:
            a, b = _AXES[self.mode[0]], _AXES[self.mode[1]]
            return material.simple_shear_gradient(self.magnitude, a, b)
        return material.uniaxial_gradient(self.magnitude, _AXES[self.mode])

    def component(self):
        """Indices of the reported stress component."""
        if self.is_shear:
            return "fsn".index(self.mode[0]), "fsn".index(self.mode[1])
        i = "fsn".index(self.mode)
        return i, i


@dataclass(frozen=True)
class DeformationProtocol:
    cases: tuple

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        if len(self.cases) != N_OUTPUTS - 1:
            raise DomainError(f"protocol needs exactly {N_OUTPUTS - 1} cases, got {len(self.cases)}")

    def __len__(self):
        return len(self.cases)

    def permuted(self, order):
        return DeformationProtocol(tuple(self.cases[i] for i in order))


def default_protocol():
    """12 simple-shear cases (gamma 0.1, 0.2 per mode) then 12 stretch cases."""
    cases = [DeformationCase(m, g) for m in SHEAR_MODES for g in (0.1, 0.2)]
    cases += [DeformationCase(m, lam) for m in STRETCH_MODES for lam in (1.05, 1.10, 1.15, 1.20)]
    return DeformationProtocol(tuple(cases))


def reference_protocol():
    """Every case at the undeformed state.

    Shear outputs and the energy vanish; each stretch output equals the
    hydrostatic reference stress ``a``.
    """
    cases = [DeformationCase(m, 0.0) for m in SHEAR_MODES for _ in range(2)]
    cases += [DeformationCase(m, 1.0) for m in STRETCH_MODES for _ in range(4)]
    return DeformationProtocol(tuple(cases))


DEFAULT_PROTOCOL = default_protocol()


def forward_analytic(theta, protocol=None, ref=None):
    """Simulate the 25 outputs for one parameter vector."""
    protocol = DEFAULT_PROTOCOL if protocol is None else protocol
    params = material.expand_parameters(theta, ref)
    y = np.empty(N_OUTPUTS)
    energy = 0.0
    for j, case in enumerate(protocol.cases):
        dg = material.DeformationGradient(case.gradient())
        sigma = material.cauchy_stress(params, dg)
        r, c = case.component()
        y[j] = sigma[r, c]
        energy += material.strain_energy(params, material.compute_invariants(dg))
    y[-1] = energy
    return y


@dataclass(frozen=True)
class TrainingSet:
    """Design matrix ``Theta`` (N x 4) paired with outputs ``Y`` (N x 25)."""

    Theta: np.ndarray
    Y: np.ndarray
    provenance: str = "analytic"
    bounds: tuple = field(default=(material.THETA_LO, material.THETA_HI))

    def __post_init__(self):
        Theta = np.array(self.Theta, dtype=float, ndmin=2)
        Y = np.array(self.Y, dtype=float, ndmin=2)
        if Theta.shape[1] != material.N_THETA:
            raise DataError(f"Theta must have {material.N_THETA} columns, got {Theta.shape[1]}")
        if Y.shape[0] != Theta.shape[0]:
            raise DataError(f"Theta has {Theta.shape[0]} rows but Y has {Y.shape[0]}")
        if not np.all(np.isfinite(Theta)) or not np.all(np.isfinite(Y)):
            raise DataError("training data contain non-finite values")
        lo, hi = self.bounds
        bad = np.nonzero(np.any((Theta < lo) | (Theta > hi), axis=1))[0]
        if bad.size:
            raise DataError(f"design row {bad[0]} violates the box [{lo:g}, {hi:g}]")
        Theta.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "Theta", Theta)
        object.__setattr__(self, "Y", Y)

    def __len__(self):
        return self.Theta.shape[0]

    @property
    def n_outputs(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return TrainingSet(self.Theta[idx], self.Y[idx], self.provenance, self.bounds)


class BatchError(HoemuError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"forward model failed at design point {index}: {cause}")


def forward_batch(thetas, protocol=None, ref=None, cache_path=None):
    """Evaluate the analytic model at each design point, in input order.

    If ``cache_path`` names an existing dataset whose design matches
    ``thetas`` exactly, it is loaded instead of recomputed; otherwise the
    result is written there.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[0] == 0:
        raise DomainError("forward_batch needs a non-empty (N, 4) array of parameter vectors")
    if cache_path is not None and os.path.exists(cache_path):
        cached = load_dataset(cache_path)
        if cached.Theta.shape == thetas.shape and np.array_equal(cached.Theta, thetas):
            return TrainingSet(cached.Theta, cached.Y, "analytic")
    Y = np.empty((thetas.shape[0], N_OUTPUTS))
    for i, theta in enumerate(thetas):
        try:
            Y[i] = forward_analytic(theta, protocol, ref)
        except HoemuError as exc:
            raise BatchError(i, exc) from exc
    ts = TrainingSet(thetas, Y, "analytic")
    if cache_path is not None:
        save_dataset(ts, cache_path)
    return ts


def dataset_header():
    return [f"theta{i + 1}" for i in range(material.N_THETA)] + [f"y{j + 1}" for j in range(N_OUTPUTS)]


def _fmt(x):
    return repr(float(x))


def format_dataset(ts):
    lines = [",".join(dataset_header())]
    for theta, y in zip(ts.Theta, ts.Y):
        lines.append(",".join(_fmt(v) for v in np.concatenate([theta, y])))
    return "\n".join(lines) + "\n"


def save_dataset(ts, path):
    atomic_write_text(path, format_dataset(ts))


def _parse_rows(path, width):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = None
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [h.strip() for h in row]
                continue
            if len(row) != width:
                raise DataError(f"expected {width} columns, found {len(row)}", line=lineno)
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataError(f"cannot parse number ({exc})", line=lineno) from exc
            if not all(np.isfinite(values)):
                raise DataError("non-finite value", line=lineno)
            rows.append((lineno, values))
    if header is None:
        raise DataError(f"{path} is empty")
    return header, rows


def load_dataset(path, bounds=(material.THETA_LO, material.THETA_HI)):
    """Read and validate a ``theta1..theta4,y1..y25`` table."""
    header, rows = _parse_rows(path, N_COLUMNS)
    if len(header) != N_COLUMNS:
        raise DataError(f"header has {len(header)} columns, expected {N_COLUMNS}", line=1)
    if header != dataset_header():
        raise DataError("header must read theta1..theta4,y1..y25", line=1)
    if not rows:
        raise DataError(f"{path} contains no data rows")
    lo, hi = bounds
    for lineno, values in rows:
        for i, t in enumerate(values[: material.N_THETA]):
            if t < lo or t > hi:
                raise DataError(f"theta{i + 1}={t:g} outside [{lo:g}, {hi:g}]", line=lineno)
    data = np.array([v for _, v in rows])
    return TrainingSet(data[:, : material.N_THETA], data[:, material.N_THETA :], "ingested", bounds)


def format_observed(y0):
    y0 = np.asarray(y0, dtype=float)
    header = ",".join(f"y{j + 1}" for j in range(y0.size))
    return header + "\n" + ",".join(_fmt(v) for v in y0) + "\n"


def save_observed(y0, path):
    atomic_write_text(path, format_observed(y0))


def load_observed(path):
    """Read a single-row ``y1..y25`` observation file."""
    header, rows = _parse_rows(path, N_OUTPUTS)
    if header != [f"y{j + 1}" for j in range(N_OUTPUTS)]:
        raise DataError("observed-data header must read y1..y25", line=1)
    if len(rows) != 1:
        raise DataError(f"observed-data file must hold exactly one row, found {len(rows)}")
    return np.array(rows[0][1])


def design_header(dim=material.N_THETA):
    return [f"theta{i + 1}" for i in range(dim)]


def format_design(Theta):
    Theta = np.atleast_2d(Theta)
    lines = [",".join(design_header(Theta.shape[1]))]
    lines += [",".join(_fmt(v) for v in row) for row in Theta]
    return "\n".join(lines) + "\n"


def save_design(Theta, path):
    atomic_write_text(path, format_design(Theta))


def load_design(path, bounds=(material.THETA_LO, material.THETA_HI)):
    """Read a ``theta1..theta4`` design table, rejecting out-of-box rows."""
    header, rows = _parse_rows(path, material.N_THETA)
    if header != design_header():
        raise DataError("design header must read theta1..theta4", line=1)
    if not rows:
        raise DataError(f"{path} contains no design rows")
    lo, hi = bounds
    for lineno, values in rows:
        for i, t in enumerate(values):
            if t < lo or t > hi:
                raise DataError(f"theta{i + 1}={t:g} outside [{lo:g}, {hi:g}]", line=lineno)
    return np.array([v for _, v in rows])
