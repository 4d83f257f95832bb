import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoemu import material as m
from hoemu.errors import DomainError, KinematicsError, SaturationError
from oracles import fd_cauchy, random_F, random_rotation

REF = (0.22, 1.62, 2.43, 0.56, 1.83, 0.77, 0.39, 1.70)
theta_1d = st.floats(0.1, 5.0, allow_nan=False)


def energy_mp(params, inv):
    """Term-by-term energy in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    a, b, af, bf, as_, bs, afs, bfs = [mpmath.mpf(v) for v in params.as_tuple()]
    I1, I4f, I4s, I8, J = [mpmath.mpf(v) for v in inv.as_tuple()]
    psi = a / (2 * b) * mpmath.exp(b * (I1 - 3))
    psi += af / (2 * bf) * (mpmath.exp(bf * (I4f - 1) ** 2) - 1)
    psi += as_ / (2 * bs) * (mpmath.exp(bs * (I4s - 1) ** 2) - 1)
    psi += afs / (2 * bfs) * (mpmath.exp(bfs * I8**2) - 1)
    psi += mpmath.mpf(10) ** 6 / 2 * (J - 1) ** 2
    # constant that makes the reference state energy-free
    return psi - a / (2 * b)


class TestExpandParameters:
    def test_reference_values_exact(self):
        assert m.expand_parameters((1, 1, 1, 1)).as_tuple() == (0.22, 1.62, 2.43, 1.83, 0.56, 0.77, 0.39, 1.70)
        p = m.expand_parameters((1, 1, 1, 1))
        assert (p.a, p.b, p.a_f, p.a_s, p.b_f, p.b_s, p.a_fs, p.b_fs) == REF
        assert p.K_penalty == 1e6

    def test_grouping(self):
        p = m.expand_parameters((2, 3, 0.5, 1))
        assert p.a == pytest.approx(0.44) and p.b == pytest.approx(3.24)
        assert p.a_f == pytest.approx(7.29) and p.a_s == pytest.approx(1.68)
        assert p.b_f == pytest.approx(0.915) and p.b_s == pytest.approx(0.385)
        assert (p.a_fs, p.b_fs) == (0.39, 1.70)

    def test_out_of_box_names_component(self):
        with pytest.raises(DomainError, match="theta1"):
            m.expand_parameters((0.05, 1, 1, 1))
        with pytest.raises(DomainError, match="theta4"):
            m.expand_parameters((1, 1, 1, 5.1))

    @given(st.tuples(theta_1d, theta_1d, theta_1d, theta_1d), st.integers(0, 3), st.floats(0.5, 1.0))
    def test_linear_in_each_component(self, theta, i, c):
        scaled = list(theta)
        scaled[i] = max(theta[i] * c, 0.1)
        factor = scaled[i] / theta[i]
        base = m.expand_parameters(theta).as_tuple()
        new = m.expand_parameters(scaled).as_tuple()
        groups = {0: (0, 1), 1: (2, 4), 2: (3, 5), 3: (6, 7)}
        for k in range(8):
            if k in groups[i]:
                assert new[k] == pytest.approx(base[k] * factor, rel=1e-14)
            else:
                assert new[k] == base[k]


class TestInvariants:
    def test_identity(self):
        inv = m.compute_invariants(m.DeformationGradient(np.eye(3)))
        assert inv.as_tuple() == (3.0, 1.0, 1.0, 0.0, 1.0)

    def test_simple_shear(self):
        F = m.simple_shear_gradient(0.2, m.FIBRE, m.SHEET)
        inv = m.compute_invariants(m.DeformationGradient(F))
        np.testing.assert_allclose(inv.as_tuple(), (3.04, 1.0, 1.04, 0.2, 1.0), rtol=0, atol=1e-14)

    def test_uniaxial(self):
        inv = m.compute_invariants(m.DeformationGradient(m.uniaxial_gradient(1.1, m.FIBRE)))
        assert inv.I1 == pytest.approx(1.21 + 2 / 1.1, abs=1e-14)
        assert inv.I4f == pytest.approx(1.21, abs=1e-14)
        assert inv.J == pytest.approx(1.0, abs=1e-14)

    def test_inverted_rejected(self):
        with pytest.raises(KinematicsError):
            m.compute_invariants(m.DeformationGradient(np.diag([1.0, 1.0, -1.0])))


class TestEnergy:
    def test_zero_at_reference(self):
        inv = m.Invariants(3.0, 1.0, 1.0, 0.0, 1.0)
        for theta in [(1, 1, 1, 1), (0.1, 5, 0.1, 5), (5, 0.1, 5, 0.1)]:
            assert m.strain_energy(m.expand_parameters(theta), inv) == 0.0

    def test_penalty_only(self):
        inv = m.Invariants(3.0, 1.0, 1.0, 0.0, 1.001)
        assert m.strain_energy(m.expand_parameters((1, 1, 1, 1)), inv) == pytest.approx(0.5, rel=1e-9)

    def test_shear_against_extended_precision(self):
        params = m.expand_parameters((1, 1, 1, 1))
        inv = m.compute_invariants(m.DeformationGradient(m.simple_shear_gradient(0.2, m.FIBRE, m.SHEET)))
        assert m.strain_energy(params, inv) == pytest.approx(float(energy_mp(params, inv)), rel=1e-13)

    @pytest.mark.parametrize("theta", [(2.0, 3.0, 0.5, 1.0), (4.5, 0.3, 4.9, 2.2)])
    def test_random_states_against_extended_precision(self, theta, rng):
        params = m.expand_parameters(theta)
        for _ in range(5):
            inv = m.compute_invariants(m.DeformationGradient(random_F(rng, 0.1)))
            assert m.strain_energy(params, inv) == pytest.approx(float(energy_mp(params, inv)), rel=1e-9)

    def test_overflow_guard(self):
        params = m.expand_parameters((5, 5, 5, 5))
        with pytest.raises(SaturationError):
            m.strain_energy(params, m.Invariants(100.0, 1.0, 1.0, 0.0, 1.0))

    def test_rotation_invariance(self, rng):
        for _ in range(20):
            theta = rng.uniform(0.1, 5.0, 4)
            params = m.expand_parameters(theta)
            F = random_F(rng, 0.1)
            Q = random_rotation(rng)
            a = m.strain_energy(params, m.compute_invariants(m.DeformationGradient(F)))
            b = m.strain_energy(params, m.compute_invariants(m.DeformationGradient(Q @ F)))
            assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


class TestStress:
    def test_reference_state_is_hydrostatic(self):
        # the isotropic term leaves sigma = a I at F = I; no deviatoric part
        params = m.expand_parameters((1, 1, 1, 1))
        sigma = m.cauchy_stress(params, m.DeformationGradient(np.eye(3)))
        np.testing.assert_allclose(sigma, 0.22 * np.eye(3), atol=1e-15)
        dev = sigma - np.trace(sigma) / 3 * np.eye(3)
        np.testing.assert_allclose(dev, 0.0, atol=1e-15)

    def test_shear_matches_finite_differences(self):
        params = m.expand_parameters((1, 1, 1, 1))
        F = m.simple_shear_gradient(0.1, m.FIBRE, m.SHEET)
        sigma = m.cauchy_stress(params, m.DeformationGradient(F))
        ref = fd_cauchy(params, F)
        assert np.linalg.norm(sigma - ref) / np.linalg.norm(ref) < 1e-5

    def test_fibre_stretch_tensile(self):
        params = m.expand_parameters((1, 1, 1, 1))
        sigma = m.cauchy_stress(params, m.DeformationGradient(m.uniaxial_gradient(1.1, m.FIBRE)))
        ref = fd_cauchy(params, m.uniaxial_gradient(1.1, m.FIBRE))
        assert sigma[0, 0] > 0 and ref[0, 0] > 0
        assert abs(sigma[0, 0] - ref[0, 0]) < 1e-5 * abs(ref[0, 0])

    def test_symmetric(self, rng):
        for _ in range(20):
            params = m.expand_parameters(rng.uniform(0.1, 5.0, 4))
            sigma = m.cauchy_stress(params, m.DeformationGradient(random_F(rng)))
            assert np.abs(sigma - sigma.T).max() <= 1e-12


class TestCurves:
    def test_reference_stretch_zero(self, rng):
        for _ in range(5):
            for direction in ("fibre", "sheet"):
                curve = m.stretch_stress_curve(rng.uniform(0.1, 5.0, 4), direction, [1.0])
                assert curve == [(1.0, 0.0)]

    def test_monotone_and_matches_fd(self):
        lams = [1.0, 1.05, 1.1]
        curve = m.stretch_stress_curve((1, 1, 1, 1), "fibre", lams)
        sig = [s for _, s in curve]
        assert sig[0] < sig[1] < sig[2]
        params = m.expand_parameters((1, 1, 1, 1))
        for lam, s in curve[1:]:
            ref = fd_cauchy(params, m.uniaxial_gradient(lam, m.FIBRE))
            assert s == pytest.approx(ref[0, 0] - ref[2, 2], rel=1e-5)

    def test_fibre_moduli_stiffen(self):
        soft = m.stretch_stress_curve((1, 1, 1, 1), "fibre", [1.1])[0][1]
        stiff = m.stretch_stress_curve((1, 2, 1, 1), "fibre", [1.1])[0][1]
        assert stiff > soft

    def test_default_grid(self):
        grid = m.default_stretch_grid()
        assert grid.size == 31 and grid[0] == 1.0 and grid[-1] == pytest.approx(1.3)

    @pytest.mark.parametrize("bad", [[0.99], [1.1, 1.0]])
    def test_bad_grid(self, bad):
        with pytest.raises(DomainError):
            m.stretch_stress_curve((1, 1, 1, 1), "fibre", bad)

    def test_bad_direction(self):
        with pytest.raises(DomainError):
            m.stretch_stress_curve((1, 1, 1, 1), "normal", [1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stress_is_energy_gradient(seed):
    rng = np.random.default_rng(seed)
    params = m.expand_parameters(rng.uniform(0.1, 5.0, 4))
    F = random_F(rng, 0.1)
    sigma = m.cauchy_stress(params, m.DeformationGradient(F))
    ref = fd_cauchy(params, F)
    assert np.linalg.norm(sigma - ref) <= 1e-5 * np.linalg.norm(ref)
