import csv
import json

import numpy as np
import pytest

from cirl.experiments import (ExperimentReport, policy_error, run_finite_sample_experiment,
                              run_generalization_experiment, run_sample_bound_check)
from cirl.gridworld import GridworldConfig


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_policy_error_examples():
    a = np.array([[1.0, 0.0], [0.5, 0.5]])
    b = np.array([[0.0, 1.0], [0.5, 0.5]])
    assert policy_error(a, b) == 2.0
    assert policy_error(a, b, weights=[0.25, 0.75]) == 0.5
    assert policy_error(a, a) == 0.0


def test_report_metric_filter():
    rep = ExperimentReport([{"method": "A", "x": 1}, {"method": "B", "x": 2}], {})
    assert rep.metric(method="B") == [{"method": "B", "x": 2}]


def test_generalization_small_budget(tmp_path):
    rep = run_generalization_experiment(GridworldConfig(), tmp_path, methods=("R1-F", "R1-M"), episodes=2000)
    assert not rep.errors
    assert {f.name for f in tmp_path.iterdir()} == {"metrics.csv", "reward_grid.json", "policy_grid.json",
                                                     "run_meta.json"}
    rows = read_rows(tmp_path / "metrics.csv")
    assert [(r["method"], r["b_regime"]) for r in rows] == [("R1-F", "train"), ("R1-F", "test"),
                                                           ("R1-M", "train"), ("R1-M", "test")]
    for r in rows:
        assert float(r["delta_mu"]) >= 0
        assert float(r["delta_j"]) >= -1e-8
    grids = json.loads((tmp_path / "reward_grid.json").read_text())
    assert set(grids) == {"expert", "R1-F", "R1-M"}
    assert np.array(grids["expert"]).shape == (6, 6)
    assert np.array(json.loads((tmp_path / "policy_grid.json").read_text())["R1-F"]).shape == (6, 6, 4)
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert meta["gda"]["episodes"] == 2000 and meta["version"].startswith("cirl-")


def test_generalization_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        run_generalization_experiment(GridworldConfig(), tmp_path / sub, methods=("R2-F",), episodes=500)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "reward_grid.json").read_bytes() == (tmp_path / "b" / "reward_grid.json").read_bytes()


def test_generalization_rejects_unknown_method():
    with pytest.raises(ValueError):
        run_generalization_experiment(methods=("R3-F",), episodes=10)


def test_finite_sample_small_budget_and_determinism(tmp_path):
    kw = dict(trajectory_counts=(10, 100), horizon=50, seeds=3, methods=("R2-l1-F", "R2-l2-M"), episodes=300)
    rep = run_finite_sample_experiment(GridworldConfig(), out_dir=tmp_path / "a", **kw)
    assert not rep.errors
    rows = read_rows(tmp_path / "a" / "metrics.csv")
    assert len(rows) == 2 * 2 * 3
    assert list(rows[0]) == ["N", "method", "quantile", "policy_error", "reward_error"]
    for r in rows:
        assert float(r["policy_error"]) >= 0 and float(r["reward_error"]) >= 0
    # quantiles are ordered within each (N, method)
    for n in ("10", "100"):
        qs = [float(r["policy_error"]) for r in rows if r["N"] == n and r["method"] == "R2-l1-F"]
        assert qs == sorted(qs)
    assert len(read_rows(tmp_path / "a" / "runs.csv")) == 2 * 2 * 3
    run_finite_sample_experiment(GridworldConfig(), out_dir=tmp_path / "b", **kw)
    for name in ("metrics.csv", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_finite_sample_parallel_matches_serial(tmp_path):
    kw = dict(trajectory_counts=(10,), horizon=20, seeds=2, methods=("R2-l1-F",), episodes=100)
    run_finite_sample_experiment(out_dir=tmp_path / "serial", jobs=1, **kw)
    run_finite_sample_experiment(out_dir=tmp_path / "pool", jobs=2, **kw)
    assert (tmp_path / "serial" / "metrics.csv").read_bytes() == (tmp_path / "pool" / "metrics.csv").read_bytes()


def test_finite_sample_validation():
    with pytest.raises(ValueError):
        run_finite_sample_experiment(trajectory_counts=())
    with pytest.raises(ValueError):
        run_finite_sample_experiment(methods=("R2-l3-F",))


def test_sample_bound_check_shape():
    out = run_sample_bound_check(epsilon=0.5, delta=0.1, seeds=1, episodes=200)
    assert (out["N"], out["T"]) == (843, 27)
    assert out["bound"] == pytest.approx(1.0)
    assert len(out["errors"]) == 1 and out["within"] in (0, 1)
