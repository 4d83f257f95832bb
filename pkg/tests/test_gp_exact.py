import warnings

import numpy as np
import pytest

from hoemu.errors import DomainError
from hoemu.gp import ARD_SE, MATERN32, ExactGP, gp_fit, gp_predict
from hoemu.gp import exact
from oracles import dense_predict


def toy(rng, n=40, d=2):
    X = rng.uniform(0, 3, (n, d))
    y = np.sin(X[:, 0]) + 0.5 * np.cos(2 * X[:, -1])
    return X, y


@pytest.mark.parametrize("family", [ARD_SE, MATERN32])
def test_predict_matches_dense_formulas(rng, family):
    X, y = toy(rng)
    ls = (0.7, 1.3) if family == ARD_SE else (0.9,)
    model = ExactGP(X, y, family, 1.4, ls, 0.3, 1e-3)
    Xq = rng.uniform(0, 3, (15, 2))
    mean, var = gp_predict(model, Xq)
    m_ref, v_ref = dense_predict(X, y, Xq, model.kernel(), 0.3, 1e-3)
    np.testing.assert_allclose(mean, m_ref, rtol=0, atol=1e-9)
    np.testing.assert_allclose(var, v_ref, rtol=0, atol=1e-9)


def test_single_point_formula():
    # k(x*, x1) = s^2 / 2 with s = 1: put x* at distance sqrt(2 log 2) (l = 1)
    X = np.array([[0.0]])
    xq = np.array([[np.sqrt(2 * np.log(2))]])
    model = ExactGP(X, np.array([2.0]), ARD_SE, 1.0, (1.0,), 0.0, 0.1)
    mean, _ = model.predict(xq)
    assert mean[0] == pytest.approx(0.5 / (1 + 0.01) * 2.0, rel=1e-12)


def test_interpolation_and_prior_reversion(rng):
    X, y = toy(rng)
    model = ExactGP(X, y, ARD_SE, 1.0, (0.8, 0.8), 0.1, 1e-8)
    mean, var = model.predict(X[:5])
    np.testing.assert_allclose(mean, y[:5], atol=1e-4)
    assert np.all(var < 1e-4)
    far_mean, far_var = model.predict(np.array([[1e3, -1e3]]))
    assert far_mean[0] == pytest.approx(0.1, abs=1e-12)
    assert far_var[0] == pytest.approx(1.0, abs=1e-12)


def test_noise_floor():
    model = ExactGP(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), ARD_SE, 1.0, (1.0,), 0.0, 0.0)
    assert model.noise_std[0] == exact.NOISE_FLOOR


def test_dimension_mismatch(rng):
    X, y = toy(rng)
    model = ExactGP(X, y, ARD_SE, 1.0, (1.0, 1.0), 0.0, 1e-3)
    with pytest.raises(DomainError):
        model.predict(np.zeros((1, 3)))


def test_variance_nonnegative(rng):
    X, y = toy(rng, 80)
    model = gp_fit(X, y, ARD_SE, restarts=1)
    _, var = model.predict(rng.uniform(-1, 4, (500, 2)))
    assert np.all(var >= 0)


@pytest.mark.parametrize("family", [ARD_SE, MATERN32])
def test_profiled_gradient_matches_finite_differences(rng, family):
    X, y = toy(rng, 30)
    Y = ((y - y.mean()) / y.std())[:, None]
    p = 2 if family == ARD_SE else 1
    D = np.sqrt(np.maximum(((X[:, None] - X[None]) ** 2).sum(-1), 0)) if family == MATERN32 else None
    for _ in range(20):
        P = np.concatenate([rng.uniform(-1.0, 1.0, p), [rng.uniform(np.log(1e-4), np.log(1e-1))]])[None]
        f, g, _, _ = exact.profiled_nll(P, X, Y, family, D)
        num = np.empty(p + 1)
        for i in range(p + 1):
            h = np.zeros_like(P)
            h[0, i] = 1e-6
            num[i] = (exact.profiled_nll(P + h, X, Y, family, D, grad=False)[0][0]
                      - exact.profiled_nll(P - h, X, Y, family, D, grad=False)[0][0]) / 2e-6
        np.testing.assert_allclose(g[0], num, rtol=1e-5, atol=1e-6 * max(1.0, abs(f[0])))


def test_profiled_matches_full_likelihood(rng):
    X, y = toy(rng, 30)
    model = gp_fit(X, y, ARD_SE, restarts=2)
    full = exact.neg_log_marginal_likelihood(
        X, y[:, None], ARD_SE, model.output_scale, model.lengthscales, model.mean_const, model.noise_std
    )
    assert -model.log_marginal_likelihood() == pytest.approx(full[0], rel=1e-8)


def test_fit_improves_on_every_start(rng):
    X, y = toy(rng, 50)
    model = gp_fit(X, y, ARD_SE, restarts=3, seed=4)
    Ys = exact.Standardizer(y[:, None]).apply(y[:, None])
    best = exact.profiled_nll(model.search_params, X, Ys, ARD_SE, grad=False)[0]
    assert model.start_nll.shape == (4, 1)
    assert np.all(best[0] <= model.start_nll[:, 0] + 1e-9)


def test_recovers_lengthscales_of_a_gp_draw():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 5, (150, 2))
    truth = (0.6, 1.5)
    from hoemu.gp import KernelSpec

    K = KernelSpec(ARD_SE, 1.0, truth).gram(X) + 1e-8 * np.eye(150)
    y = np.linalg.cholesky(K) @ rng.standard_normal(150)
    model = gp_fit(X, y, ARD_SE, restarts=3)
    ratio = model.lengthscales[0] / np.array(truth)
    assert np.all((ratio > 0.5) & (ratio < 2.0))
    at_truth = exact.neg_log_marginal_likelihood(X, y[:, None], ARD_SE, [1.0], [truth], [0.0], [1e-4])
    assert -model.log_marginal_likelihood() <= at_truth[0]


def test_constant_outputs():
    X = np.random.default_rng(0).uniform(0, 1, (20, 2))
    model = gp_fit(X, np.full(20, 5.0))
    assert model.mean_const[0] == pytest.approx(5.0, abs=1e-9)
    assert model.output_scale[0] < 1e-4
    mean, _ = model.predict(np.array([[0.3, 0.9], [3.0, 3.0]]))
    np.testing.assert_allclose(mean, 5.0, atol=1e-9)


def test_duplicates_collapsed_with_warning():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 0.5]])
    y = np.array([0.0, 1.0, 3.0, 2.0])
    with pytest.warns(RuntimeWarning, match="duplicate"):
        model = gp_fit(X, y, restarts=0)
    assert model.X.shape[0] == 3
    assert model.Y[1, 0] == 2.0


def test_batched_outputs_fit_independently(rng):
    X, y = toy(rng, 40)
    Y = np.column_stack([y, 3 * y**2, np.cos(X[:, 1])])
    batch = gp_fit(X, Y, restarts=1, seed=2)
    for j in range(3):
        single = gp_fit(X, Y[:, j], restarts=1, seed=2)
        # agreement is limited by the optimizer stopping rule, not by coupling
        np.testing.assert_allclose(batch.lengthscales[j], single.lengthscales[0], rtol=1e-4)
        np.testing.assert_allclose(batch.predict(X[:3])[0][:, j], single.predict(X[:3])[0], rtol=1e-5, atol=1e-7)
