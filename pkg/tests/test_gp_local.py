import numpy as np
import pytest

from hoemu.errors import DomainError
from hoemu.gp import LocalGP, LocalGPConfig, gp_fit, local_gp_predict


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(11)
    X = rng.uniform(0.1, 5.0, (60, 3))
    Y = np.column_stack([np.sin(X[:, 0]) * X[:, 1], np.log(X[:, 2]) + X[:, 0]])
    return X, Y


def test_full_neighbourhood_equals_exact_gp(data):
    X, Y = data
    cfg = LocalGPConfig(k=len(X), init="default", restarts=2, seed=5)
    Xq = np.array([[1.0, 2.0, 3.0], [4.5, 0.5, 2.2]])
    local_mean, local_var = LocalGP(X, Y, cfg).predict(Xq)
    full = gp_fit(X, Y, restarts=2, seed=5)
    mean, var = full.predict(Xq)
    np.testing.assert_allclose(local_mean, mean, rtol=0, atol=1e-10)
    np.testing.assert_allclose(local_var, var, rtol=0, atol=1e-10)


def test_full_neighbourhood_with_pilot_start(data):
    X, Y = data
    cfg = LocalGPConfig(k=len(X), init="pilot", restarts=2)
    model = LocalGP(X, Y, cfg)
    xq = np.array([[2.0, 2.0, 2.0]])
    mean, _ = model.predict(xq)
    pilot = gp_fit(X, Y, restarts=2)
    ref = gp_fit(X, Y, restarts=0, init=pilot.search_params)
    np.testing.assert_allclose(mean, ref.predict(xq)[0], atol=1e-10)


def test_single_neighbour_toy():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([10.0, 20.0, 30.0])
    mean, _ = local_gp_predict(X, y, np.array([[0.9], [1.1], [2.4]]), LocalGPConfig(k=1))
    # one neighbour: the standardized target is zero, so the prediction is its value
    np.testing.assert_allclose(mean, [20.0, 20.0, 30.0], atol=1e-9)


def test_too_many_neighbours(data):
    X, Y = data
    with pytest.raises(DomainError, match="exceeds"):
        LocalGP(X, Y, LocalGPConfig(k=61))


def test_neighbours_sorted_and_nearest(data):
    X, Y = data
    model = LocalGP(X, Y, LocalGPConfig(k=7))
    x = np.array([2.0, 3.0, 1.0])
    idx = model.neighbours(x)
    assert np.all(np.diff(idx) > 0)
    d = np.linalg.norm(X - x, axis=1)
    np.testing.assert_array_equal(idx, np.sort(np.argsort(d, kind="stable")[:7]))


def test_cache_shared_by_a_stencil(data):
    X, Y = data
    model = LocalGP(X, Y, LocalGPConfig(k=20))
    x = np.array([2.5, 2.5, 2.5])
    stencil = x + 1e-6 * np.vstack([np.zeros(3), np.eye(3), -np.eye(3)])
    model.predict(stencil)
    assert model.misses == 1 and model.hits == 6


def test_cached_and_fresh_predictions_agree(data):
    X, Y = data
    cfg = LocalGPConfig(k=15)
    warm = LocalGP(X, Y, cfg)
    Xq = np.random.default_rng(2).uniform(0.1, 5.0, (10, 3))
    warm.predict(Xq[::-1])
    a = warm.predict(Xq)[0]
    b = LocalGP(X, Y, cfg).predict(Xq)[0]
    np.testing.assert_array_equal(a, b)


def test_cache_eviction(data):
    X, Y = data
    model = LocalGP(X, Y, LocalGPConfig(k=5, cache_size=2))
    for x in X[:6]:
        model.predict(x[None])
    assert len(model._cache) == 2
    model.clear_cache()
    assert len(model._cache) == 0


def test_previous_mode_runs(data):
    X, Y = data
    model = LocalGP(X, Y, LocalGPConfig(k=15, init="previous"))
    mean, var = model.predict(X[:3] + 0.01)
    assert np.all(np.isfinite(mean)) and np.all(var >= 0)


def test_single_output_shape(data):
    X, Y = data
    mean, var = LocalGP(X, Y[:, 0], LocalGPConfig(k=10)).predict(X[:4])
    assert mean.shape == (4,) and var.shape == (4,)


@pytest.mark.parametrize("bad", [dict(k=0), dict(init="warm"), dict(family="rbf"), dict(restarts=-1)])
def test_config_validation(bad):
    with pytest.raises(DomainError):
        LocalGPConfig(**bad)
