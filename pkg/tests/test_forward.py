import numpy as np
import pytest

from hoemu import forward, material
from hoemu.errors import DataError, DomainError


def test_reference_protocol_outputs():
    y = forward.forward_analytic((2.0, 1.0, 3.0, 0.5), forward.reference_protocol())
    assert y.shape == (25,)
    # shear entries vanish and stretch entries carry only the reference pressure a
    shear = np.array([c.is_shear for c in forward.reference_protocol().cases])
    assert np.all(y[:24][shear] == 0.0)
    np.testing.assert_allclose(y[:24][~shear], 2.0 * 0.22, rtol=1e-14)
    assert y[24] == 0.0


def test_default_protocol_layout():
    p = forward.default_protocol()
    assert len(p) == 24
    assert [c.mode for c in p.cases[:12:2]] == list(forward.SHEAR_MODES)
    assert sorted({c.magnitude for c in p.cases[:12]}) == [0.1, 0.2]
    assert sorted({c.magnitude for c in p.cases[12:]}) == [1.05, 1.10, 1.15, 1.20]


def test_outputs_match_per_case_stress():
    theta = (1.0, 1.0, 1.0, 1.0)
    y = forward.forward_analytic(theta)
    params = material.expand_parameters(theta)
    energy = 0.0
    for j, case in enumerate(forward.DEFAULT_PROTOCOL.cases):
        dg = material.DeformationGradient(case.gradient())
        sigma = material.cauchy_stress(params, dg)
        r, c = case.component()
        assert y[j] == sigma[r, c]
        energy += material.strain_energy(params, material.compute_invariants(dg))
    assert y[24] == pytest.approx(energy, rel=1e-15)
    assert np.all(np.isfinite(y)) and y[24] > 0


def test_deterministic():
    a = forward.forward_analytic((0.3, 4.4, 2.0, 1.1))
    b = forward.forward_analytic((0.3, 4.4, 2.0, 1.1))
    assert a.tobytes() == b.tobytes()


def test_permutation_equivariance(rng):
    order = rng.permutation(24)
    theta = (1.7, 0.6, 2.2, 3.3)
    y = forward.forward_analytic(theta)
    yp = forward.forward_analytic(theta, forward.DEFAULT_PROTOCOL.permuted(order))
    np.testing.assert_array_equal(yp[:24], y[order])
    assert yp[24] == pytest.approx(y[24], rel=1e-14)


def test_batch_equals_map():
    thetas = np.array([[1, 1, 1, 1], [0.5, 2, 3, 4], [4.9, 0.1, 0.2, 2.0]], dtype=float)
    ts = forward.forward_batch(thetas)
    assert ts.Y.shape == (3, 25)
    for t, y in zip(thetas, ts.Y):
        assert y.tobytes() == forward.forward_analytic(t).tobytes()


def test_batch_errors():
    with pytest.raises(DomainError):
        forward.forward_batch(np.empty((0, 4)))
    with pytest.raises(forward.BatchError, match="design point 1"):
        forward.forward_batch(np.array([[1, 1, 1, 1.0], [7, 1, 1, 1.0]]))


def test_batch_cache(tmp_path):
    thetas = np.array([[1, 1, 1, 1], [2, 2, 2, 2.0]])
    path = tmp_path / "cache.csv"
    first = forward.forward_batch(thetas, cache_path=path)
    assert path.exists()
    again = forward.forward_batch(thetas, cache_path=path)
    np.testing.assert_array_equal(first.Y, again.Y)


def test_dataset_round_trip(tmp_path, small_train):
    path = tmp_path / "train.csv"
    forward.save_dataset(small_train, path)
    loaded = forward.load_dataset(path)
    np.testing.assert_array_equal(loaded.Theta, small_train.Theta)
    np.testing.assert_array_equal(loaded.Y, small_train.Y)
    assert loaded.provenance == "ingested"
    assert path.read_text().splitlines()[0] == ",".join(forward.dataset_header())


def _write(path, rows):
    header = ",".join(forward.dataset_header())
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def test_load_two_rows(tmp_path):
    _write(tmp_path / "d.csv", [[1, 1, 1, 1] + [0.0] * 25, [2, 2, 2, 2] + [1.0] * 25])
    assert len(forward.load_dataset(tmp_path / "d.csv")) == 2


def test_load_bound_violation_reports_line(tmp_path):
    _write(tmp_path / "d.csv", [[1, 1, 1, 1] + [0.0] * 25, [7.0, 1, 1, 1] + [0.0] * 25])
    with pytest.raises(DataError, match="line 3") as exc:
        forward.load_dataset(tmp_path / "d.csv")
    assert exc.value.line == 3


def test_load_width_violation_reports_line(tmp_path):
    _write(tmp_path / "d.csv", [[1, 1, 1, 1] + [0.0] * 24])
    with pytest.raises(DataError, match="line 2"):
        forward.load_dataset(tmp_path / "d.csv")


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        forward.load_dataset(tmp_path / "absent.csv")


def test_observed_round_trip(tmp_path):
    y = forward.forward_analytic((1, 2, 3, 4))
    forward.save_observed(y, tmp_path / "y0.csv")
    np.testing.assert_array_equal(forward.load_observed(tmp_path / "y0.csv"), y)


def test_design_file_round_trip(tmp_path):
    X = np.array([[1.0, 2.0, 3.0, 4.0], [0.1, 5.0, 0.2, 0.3]])
    forward.save_design(X, tmp_path / "d.csv")
    np.testing.assert_array_equal(forward.load_design(tmp_path / "d.csv"), X)


def test_training_set_validation():
    with pytest.raises(DataError):
        forward.TrainingSet(np.ones((2, 4)), np.ones((3, 25)))
    with pytest.raises(DataError):
        forward.TrainingSet(np.full((1, 4), 9.0), np.ones((1, 25)))
