import numpy as np
import pytest

from hoemu import bench
from hoemu.errors import DomainError
from hoemu.forward import forward_batch
from hoemu.gp import LocalGPConfig
from hoemu.gp.lowrank import LowRankConfig
from hoemu.infer import CG_MULTISTART, GLOBAL_SEARCH, OptimizerConfig
from hoemu.io import dumps

FAST = bench.BenchSettings(
    local=LocalGPConfig(k=30, restarts=1),
    output_rank=LowRankConfig(n_r=150, k=80),
    loss_rank=LowRankConfig(n_r=150, k=60),
    global_search=OptimizerConfig(GLOBAL_SEARCH, trial_points=120, stage_one_points=40, local_runs=1),
    cg=OptimizerConfig(CG_MULTISTART, starts=6, maxiter=60),
)


def test_parameter_mse_example():
    assert bench.parameter_mse([1.5, 2.5, 0.8, 3.0], [1.6, 2.5, 0.8, 3.0]) == pytest.approx(0.0025)
    assert bench.parameter_mse([1.0] * 4, [1.0] * 4) == 0.0


def test_quartiles_examples():
    assert bench.quartiles([1, 2, 3, 4, 5]) == (3.0, 2.0, 4.0)
    assert bench.quartiles([1, 2, 3, 4]) == (2.5, 1.75, 3.25)
    assert bench.quartiles([7.0]) == (7.0, 7.0, 7.0)
    assert bench.quartiles([1, np.nan, 3]) == (2.0, 1.5, 2.5)
    with pytest.raises(DomainError):
        bench.quartiles([np.nan])


def test_combo_labels():
    assert len(bench.ALL_COMBOS) == 8 and len(set(bench.ALL_COMBOS)) == 8
    for c in bench.ALL_COMBOS:
        assert bench.MethodCombo.parse(c.label) == c
    c = bench.MethodCombo.parse("output-lowrank-mahalanobis")
    assert (c.interpolator, c.framework, c.loss, c.strategy) == ("lowrank", "output", "mahalanobis", CG_MULTISTART)
    assert bench.MethodCombo.parse("loss-local-euclidean").strategy == GLOBAL_SEARCH
    for bad in ["output-local", "output-gp-euclidean", "out-local-euclidean"]:
        with pytest.raises(DomainError):
            bench.MethodCombo.parse(bad)


@pytest.fixture(scope="module")
def report(small_train, small_test):
    test = small_test.subset(np.arange(2))
    return bench.run_benchmark(small_train, test, bench.ALL_COMBOS, seed=0, settings=FAST)


def test_report_covers_every_cell(report):
    assert report.n_cases == 2
    for c in bench.ALL_COMBOS:
        assert report.mse[c.label].shape == (2,)
        ok = np.isfinite(report.mse[c.label])
        assert ok.sum() + len(report.failures[c.label]) == 2
    rows = bench.summarize(report)
    assert [r["combo"] for r in rows] == [c.label for c in bench.ALL_COMBOS]
    assert all(r["n_ok"] + r["n_failed"] == 2 for r in rows)
    text = bench.format_summary(rows)
    assert text.count("\n") == 9


def test_record_is_serializable(report):
    rec = report.record()
    assert rec["schema"] == "hoemu.bench/1" and rec["n_cases"] == 2
    assert "runtime" not in dumps(rec)


def test_seeded_rerun_is_identical(small_train, small_test, report):
    test = small_test.subset(np.arange(2))
    combos = [bench.MethodCombo("local", "output", "euclidean"), bench.MethodCombo("lowrank", "loss", "mahalanobis")]
    again = bench.run_benchmark(small_train, test, combos, seed=0, settings=FAST)
    for c in combos:
        np.testing.assert_array_equal(again.mse[c.label], report.mse[c.label])


def test_memorized_case_recovered(small_train):
    # a test case that coincides with a training point
    test = small_train.subset(np.array([123]))
    combo = bench.MethodCombo("local", "output", "euclidean")
    rep = bench.run_benchmark(small_train, test, [combo], settings=FAST)
    assert rep.mse[combo.label][0] < 1e-3


def test_failures_recorded(small_train, small_test):
    # observations of the wrong length fail every case without aborting the run
    bad = small_test.subset(np.arange(2))

    class Broken:
        Theta = bad.Theta
        Y = bad.Y[:, :-1]

        def __len__(self):
            return 2

    combo = bench.MethodCombo("local", "output", "euclidean")
    rep = bench.run_benchmark(small_train, Broken(), [combo], settings=FAST)
    assert np.all(np.isnan(rep.mse[combo.label]))
    assert [i for i, _ in rep.failures[combo.label]] == [0, 1]
    row = bench.summarize(rep)[0]
    assert row["n_failed"] == 2 and np.isnan(row["median"])


def test_ranking_holds():
    rows = [
        {"combo": "output-local-euclidean", "median": 1e-6},
        {"combo": "loss-local-euclidean", "median": 1e-2},
        {"combo": "output-lowrank-mahalanobis", "median": 0.5},
        {"combo": "loss-lowrank-mahalanobis", "median": 0.1},
    ]
    assert bench.ranking_holds(rows) == {"local-euclidean": True, "lowrank-mahalanobis": False}


def test_empty_inputs_rejected(small_train, small_test):
    with pytest.raises(DomainError):
        bench.run_benchmark(small_train, small_test, [], settings=FAST)
    with pytest.raises(DomainError):
        bench.run_benchmark(small_train, forward_batch(np.empty((0, 4))), settings=FAST)
