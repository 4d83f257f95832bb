import numpy as np
import pytest

from hoemu import _backend, _kernels_py
from hoemu.errors import DomainError
from hoemu.gp import ARD_SE, MATERN32, KernelSpec, is_psd, kernel_eval

try:
    from hoemu import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def test_same_point_gives_variance():
    for spec in [KernelSpec(ARD_SE, 1.7, (0.3, 2.0)), KernelSpec(MATERN32, 1.7, (0.4,))]:
        assert kernel_eval(spec, [1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.7**2, rel=1e-15)


def test_closed_forms():
    assert kernel_eval(KernelSpec(ARD_SE, 1.0, (1.0, 1.0)), [0, 0], [1, 0]) == pytest.approx(np.exp(-0.5), rel=1e-15)
    expected = (1 + np.sqrt(3)) * np.exp(-np.sqrt(3))
    assert kernel_eval(KernelSpec(MATERN32, 1.0, (1.0,)), [0, 0], [1, 0]) == pytest.approx(expected, rel=1e-14)
    assert kernel_eval(KernelSpec(MATERN32, 1.0, (1.0,)), [0, 0], [1, 0]) == pytest.approx(0.48335, abs=1e-5)


@pytest.mark.parametrize("bad", [dict(output_scale=0.0), dict(lengthscales=(1.0, -1.0))])
def test_nonpositive_rejected(bad):
    kw = dict(family=ARD_SE, output_scale=1.0, lengthscales=(1.0, 1.0))
    kw.update(bad)
    with pytest.raises(DomainError):
        KernelSpec(**kw)


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        kernel_eval(KernelSpec(ARD_SE, 1.0, (1.0, 1.0)), [0, 0, 0], [0, 0, 0])


def test_random_gram_matrices_psd(rng):
    for i in range(100):
        X = rng.uniform(0.1, 5.0, (int(rng.integers(2, 40)), 4))
        if i % 2:
            spec = KernelSpec(ARD_SE, rng.uniform(0.1, 3), tuple(rng.uniform(0.1, 5, 4)))
        else:
            spec = KernelSpec(MATERN32, rng.uniform(0.1, 3), (rng.uniform(0.1, 5),))
        assert is_psd(spec.gram(X))


def test_backend_name():
    assert _backend.NAME in ("cython", "python")


@needs_ext
class TestBackendEquivalence:
    def setup_method(self):
        r = np.random.default_rng(7)
        self.X = np.ascontiguousarray(r.uniform(0.1, 5, (60, 4)))
        self.Z = np.ascontiguousarray(r.uniform(0.1, 5, (30, 4)))
        self.inv = np.ascontiguousarray(r.uniform(0.05, 2, (3, 4)))
        self.s2 = np.ascontiguousarray(r.uniform(0.5, 2, 3))
        self.Y = np.ascontiguousarray(r.standard_normal((60, 3)))

    def test_sqdist(self):
        np.testing.assert_allclose(_kernels.sqdist(self.X, self.Z), _kernels_py.sqdist(self.X, self.Z), atol=1e-12)

    def test_gram_and_cross(self):
        np.testing.assert_allclose(
            _kernels.ard_se_gram(self.X, self.inv, self.s2), _kernels_py.ard_se_gram(self.X, self.inv, self.s2), atol=1e-14
        )
        np.testing.assert_allclose(
            _kernels.ard_se_cross(self.Z, self.X, self.inv, self.s2),
            _kernels_py.ard_se_cross(self.Z, self.X, self.inv, self.s2),
            atol=1e-14,
        )

    def test_matern(self):
        D2 = _kernels_py.sqdist(self.X, self.Z)
        np.testing.assert_allclose(_kernels.matern32(D2, 0.7, 1.3), _kernels_py.matern32(D2, 0.7, 1.3), atol=1e-14)

    def test_knn(self):
        x = np.ascontiguousarray(self.X[5] + 1e-3)
        np.testing.assert_array_equal(np.sort(_kernels.knn(self.X, x, 10)), np.sort(_kernels_py.knn(self.X, x, 10)))

    def test_chol_inv(self):
        K = _kernels_py.ard_se_gram(self.X, self.inv, self.s2) + 1e-3 * np.eye(60)
        a, la, oka = _kernels.chol_inv(np.ascontiguousarray(K))
        b, lb, okb = _kernels_py.chol_inv(np.ascontiguousarray(K))
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(la, lb, rtol=1e-12)
        assert oka.all() and okb.all()

    @pytest.mark.parametrize("matern", [False, True])
    def test_profiled_nll(self, matern):
        p = 1 if matern else 4
        P = np.ascontiguousarray(np.column_stack([np.full((3, p), np.log(1.5)), np.log([1e-3, 1e-2, 1e-4])]))
        D = np.ascontiguousarray(np.sqrt(_kernels_py.sqdist(self.X, self.X))) if matern else np.zeros((1, 1))
        a = _kernels.profiled_nll(self.X, D, P, self.Y, matern, 1e-12)
        b = _kernels_py.profiled_nll(self.X, D, P, self.Y, matern, 1e-12)
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=1e-8, atol=1e-9)


def test_knn_ties_prefer_lower_index():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
    idx = np.sort(_backend.knn(X, np.array([1.0, 1.0]), 1))
    assert idx.tolist() == [1]
    idx = np.sort(_backend.knn(X, np.array([0.5, 0.5]), 2))
    assert idx.tolist() == [0, 1]


def test_forced_fallback_gives_same_predictions():
    import os
    import subprocess
    import sys

    code = (
        "import numpy as np, hoemu; from hoemu.gp import gp_fit;"
        "r = np.random.default_rng(0); X = r.uniform(0, 3, (40, 2)); y = np.sin(X).sum(1);"
        "m = gp_fit(X, y, restarts=1); print(hoemu.BACKEND, repr(float(m.predict(X[:1] + 0.1)[0][0])))"
    )
    out = {}
    for backend in ("python", ""):
        env = dict(os.environ, HOEMU_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        name, value = res.stdout.split()
        out[name] = float(value)
    assert "python" in out
    if len(out) == 2:
        assert out["python"] == pytest.approx(out["cython"], rel=1e-8)
