"""Holzapfel-Ogden strain energy, invariants and Cauchy stress.

The strain energy is the invariant form of the Holzapfel-Ogden law with the
four-group reduced parameterisation::

    a   = theta1 a0      b    = theta1 b0
    a_f = theta2 a_f0    a_s  = theta2 a_s0
    b_f = theta3 b_f0    b_s  = theta3 b_s0
    a_fs = theta4 a_fs0  b_fs = theta4 b_fs0

The fibre and sheet terms are active in compression as well as tension (no
``I4 > 1`` switch).
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError, KinematicsError, SaturationError

THETA_LO = 0.1
THETA_HI = 5.0
N_THETA = 4
K_PENALTY = 1.0e6
EXP_LIMIT = 700.0

FIBRE = np.array([1.0, 0.0, 0.0])
SHEET = np.array([0.0, 1.0, 0.0])
NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class ReferenceParams:
    """Literature reference values that the four scale factors multiply."""

    a0: float = 0.22
    b0: float = 1.62
    a_f0: float = 2.43
    a_s0: float = 0.56
    b_f0: float = 1.83
    b_s0: float = 0.77
    a_fs0: float = 0.39
    b_fs0: float = 1.70

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise DomainError(f"reference value {f.name} must be positive")


@dataclass(frozen=True)
class MaterialParams:
    a: float
    b: float
    a_f: float
    b_f: float
    a_s: float
    b_s: float
    a_fs: float
    b_fs: float
    K_penalty: float = K_PENALTY

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"material parameter {f.name}={value!r} must be positive and finite")

    def as_tuple(self):
        return (self.a, self.b, self.a_f, self.b_f, self.a_s, self.b_s, self.a_fs, self.b_fs)


@dataclass(frozen=True)
class Invariants:
    I1: float
    I4f: float
    I4s: float
    I8fs: float
    J: float

    def as_tuple(self):
        return (self.I1, self.I4f, self.I4s, self.I8fs, self.J)


@dataclass(frozen=True)
class DeformationGradient:
    """Deformation gradient together with the reference fibre and sheet axes."""

    F: np.ndarray
    f0: np.ndarray = FIBRE
    s0: np.ndarray = SHEET

    def __post_init__(self):
        F = np.array(self.F, dtype=float)
        if F.shape != (3, 3) or not np.all(np.isfinite(F)):
            raise KinematicsError("F must be a finite 3x3 matrix")
        F.setflags(write=False)
        object.__setattr__(self, "F", F)
        for name in ("f0", "s0"):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.isclose(np.linalg.norm(v), 1.0, atol=1e-10):
                raise KinematicsError(f"{name} must be a unit 3-vector")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def validate_theta(theta, lo=THETA_LO, hi=THETA_HI):
    """Return ``theta`` as a float array of shape (4,), checking the box."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_THETA,):
        raise DomainError(f"theta must have {N_THETA} components, got shape {theta.shape}")
    for i, t in enumerate(theta):
        if not np.isfinite(t):
            raise DomainError(f"theta{i + 1} is not finite")
        if t < lo or t > hi:
            raise DomainError(f"theta{i + 1}={t:g} outside [{lo:g}, {hi:g}]")
    return theta


def expand_parameters(theta, ref=None):
    """Map the four scale factors onto the eight Holzapfel-Ogden parameters."""
    t1, t2, t3, t4 = validate_theta(theta)
    ref = ReferenceParams() if ref is None else ref
    return MaterialParams(
        a=t1 * ref.a0,
        b=t1 * ref.b0,
        a_f=t2 * ref.a_f0,
        b_f=t3 * ref.b_f0,
        a_s=t2 * ref.a_s0,
        b_s=t3 * ref.b_s0,
        a_fs=t4 * ref.a_fs0,
        b_fs=t4 * ref.b_fs0,
    )


def compute_invariants(defgrad):
    F = defgrad.F
    J = float(np.linalg.det(F))
    if not J > 0:
        raise KinematicsError(f"det(F)={J:g} is not positive")
    C = F.T @ F
    f0, s0 = defgrad.f0, defgrad.s0
    return Invariants(
        I1=float(np.trace(C)),
        I4f=float(f0 @ C @ f0),
        I4s=float(s0 @ C @ s0),
        I8fs=float(f0 @ C @ s0),
        J=J,
    )


def _checked_exp(arg, term):
    if arg > EXP_LIMIT:
        raise SaturationError(f"exponent of the {term} term is {arg:.4g} (> {EXP_LIMIT:g})")
    return np.exp(arg)


def _exponentials(params, inv):
    e_iso = _checked_exp(params.b * (inv.I1 - 3.0), "isotropic")
    e_f = _checked_exp(params.b_f * (inv.I4f - 1.0) ** 2, "fibre")
    e_s = _checked_exp(params.b_s * (inv.I4s - 1.0) ** 2, "sheet")
    e_fs = _checked_exp(params.b_fs * inv.I8fs**2, "fibre-sheet")
    return e_iso, e_f, e_s, e_fs


def strain_energy(params, inv):
    p = params
    e_iso, e_f, e_s, e_fs = _exponentials(p, inv)
    # expm1 keeps the small-strain terms accurate; the guard above already ran
    psi = p.a / (2 * p.b) * np.expm1(p.b * (inv.I1 - 3.0))
    psi += p.a_f / (2 * p.b_f) * np.expm1(p.b_f * (inv.I4f - 1.0) ** 2)
    psi += p.a_s / (2 * p.b_s) * np.expm1(p.b_s * (inv.I4s - 1.0) ** 2)
    psi += p.a_fs / (2 * p.b_fs) * np.expm1(p.b_fs * inv.I8fs**2)
    psi += 0.5 * p.K_penalty * (inv.J - 1.0) ** 2
    return float(psi)


def energy_derivatives(params, inv):
    """Partial derivatives of the strain energy with respect to the invariants.

    Returns
    -------
    tuple of float
        ``(dPsi/dI1, dPsi/dI4f, dPsi/dI4s, dPsi/dI8fs, dPsi/dJ)``.
    """
    p = params
    e_iso, e_f, e_s, e_fs = _exponentials(p, inv)
    return (
        0.5 * p.a * e_iso,
        p.a_f * (inv.I4f - 1.0) * e_f,
        p.a_s * (inv.I4s - 1.0) * e_s,
        p.a_fs * inv.I8fs * e_fs,
        p.K_penalty * (inv.J - 1.0),
    )


def second_piola_kirchhoff(params, defgrad):
    inv = compute_invariants(defgrad)
    d1, d4f, d4s, d8, dJ = energy_derivatives(params, inv)
    F = defgrad.F
    f0, s0 = defgrad.f0, defgrad.s0
    C = F.T @ F
    S = 2.0 * (
        d1 * np.eye(3)
        + d4f * np.outer(f0, f0)
        + d4s * np.outer(s0, s0)
        + d8 * 0.5 * (np.outer(f0, s0) + np.outer(s0, f0))
    )
    S += dJ * inv.J * np.linalg.inv(C)
    return 0.5 * (S + S.T), inv


def cauchy_stress(params, defgrad):
    """Cauchy stress ``F S F^T / J`` for a homogeneous deformation."""
    S, inv = second_piola_kirchhoff(params, defgrad)
    F = defgrad.F
    sigma = F @ S @ F.T / inv.J
    return 0.5 * (sigma + sigma.T)


def uniaxial_gradient(stretch, axis):
    """Isochoric uniaxial stretch ``stretch`` along ``axis`` (a unit vector).

    Lateral directions contract by ``stretch**-0.5`` so that ``det F = 1``.
    """
    axis = np.asarray(axis, dtype=float)
    lateral = stretch**-0.5
    return lateral * np.eye(3) + (stretch - lateral) * np.outer(axis, axis)


def simple_shear_gradient(gamma, shear_dir, normal_dir):
    """``F = I + gamma * shear_dir (x) normal_dir``."""
    return np.eye(3) + gamma * np.outer(shear_dir, normal_dir)


def stretch_stress_curve(theta, direction="fibre", stretches=None, ref=None):
    """Uniaxial stress along the fibre or sheet axis under isochoric stretch.

    The energy's isotropic term leaves a hydrostatic stress ``a I`` at the
    reference state, which an incompressible material carries as pressure.
    The pressure is fixed by the traction-free normal axis, so the value
    reported is ``sigma_dd - sigma_nn`` with ``d`` the loading axis; it is
    zero at ``stretch = 1``.

    Parameters
    ----------
    theta : array_like, shape (4,)
        Scale factors.
    direction : {"fibre", "sheet"}
        Loading axis.
    stretches : array_like, optional
        Ascending stretch values, each >= 1. Defaults to 31 points on [1, 1.3].

    Returns
    -------
    list of (float, float)
        ``(stretch, sigma)`` pairs.
    """
    axis = _direction_axis(direction)
    lams = default_stretch_grid() if stretches is None else np.asarray(stretches, dtype=float)
    if lams.ndim != 1 or lams.size == 0:
        raise DomainError("stretch grid must be a non-empty 1-D sequence")
    if np.any(lams < 1.0):
        raise DomainError(f"stretch {lams[lams < 1.0][0]:g} is below 1")
    if np.any(np.diff(lams) < 0):
        raise DomainError("stretch grid must be ascending")
    params = expand_parameters(theta, ref)
    out = []
    for lam in lams:
        sigma = cauchy_stress(params, DeformationGradient(uniaxial_gradient(lam, axis)))
        out.append((float(lam), float(axis @ sigma @ axis - NORMAL @ sigma @ NORMAL)))
    return out


def default_stretch_grid():
    return np.linspace(1.0, 1.3, 31)


def _direction_axis(direction):
    if direction in ("fibre", "fiber", "f", "myocyte"):
        return FIBRE
    if direction in ("sheet", "s"):
        return SHEET
    raise DomainError(f"unknown loading direction {direction!r}")
