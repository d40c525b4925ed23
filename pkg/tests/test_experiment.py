import json

import numpy as np
import pytest
from conftest import SMALL

from touchcal.config import load_config
from touchcal.experiment import (
    RunResult,
    grid_for,
    pose_errors,
    replay,
    run_once,
    run_sweep,
    summarize,
    sweep_cells,
    write_csv,
)
from touchcal.se3 import Pose6
from touchcal.world import load_observations


def small(*extra):
    return load_config("box_table", SMALL + list(extra))


def test_config_validation():
    with pytest.raises(ValueError):
        small("max_iterations=0")
    with pytest.raises(ValueError):
        small("seeds=[]")
    with pytest.raises(ValueError):
        load_config("box_table", ["filter.M"])


def test_overrides_reach_leaves():
    cfg = small("filter.sigma_P=0.02", "criteria.eps_V=1.0e-3")
    assert cfg.filter.sigma_P == 0.02
    assert cfg.criteria.eps_V == (1e-3,) * 6
    assert cfg.filter.M == 300


def test_pose_errors():
    t, r = pose_errors(np.array([0.01, 0, 0, 0, 0, 0.02]), Pose6())
    assert t == pytest.approx(1.0)
    assert r == pytest.approx(0.02)


def test_single_iteration(tmp_path):
    res = run_once(small("max_iterations=1"), 0, trace_dir=tmp_path)
    assert res.iterations == 1 and not res.terminated
    lines = (tmp_path / "trace_seed0.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    for key in ("t", "estimate", "variance", "ess", "sigma_t", "C", "S", "V", "pass_count", "J_t", "weights_ms"):
        assert key in rec
    assert len(load_observations(tmp_path / "observations_seed0.jsonl")) == 1


def test_run_is_deterministic_and_thread_independent():
    a = run_once(small(), 3)
    b = run_once(small("workers=4"), 3)
    assert a.estimate == b.estimate
    assert a.translational_error_cm == b.translational_error_cm


def test_replay_matches_live_run(tmp_path):
    cfg = small()
    live = run_once(cfg, 1, trace_dir=tmp_path)
    recs = load_observations(tmp_path / "observations_seed1.jsonl")
    out = replay(cfg, recs, seed=1, truth=live.truth)
    assert out["iterations"] == live.iterations
    assert out["estimate"] == live.estimate
    assert out["translational_error_cm"] == pytest.approx(live.translational_error_cm)


def test_grid_cache_file(tmp_path):
    cfg = small()
    path = tmp_path / "g.sdf"
    grid_for(cfg).save(path)
    other = small("grid.padding=0.149", f"grid.cache={path}")
    assert np.array_equal(grid_for(other).values, grid_for(cfg).values)


def test_sweep_counting(tmp_path):
    cfg = small("max_iterations=1", "sweep={filter.sigma_P: [0.005, 0.02]}")
    assert len(sweep_cells(cfg.sweep)) == 2
    res = run_sweep(cfg, tmp_path, seeds=[0, 1, 2, 3, 4])
    assert len(res.rows) == 2 and [r["runs"] for r in res.rows] == [5, 5]
    assert sum(len(v) for v in res.results.values()) == 10
    text = (tmp_path / "summary.csv").read_text()
    assert text == res.csv()
    assert text.splitlines()[0].startswith("filter.sigma_P,runs,terminated,failed,translational_error_cm_mean")
    assert (tmp_path / "timing.csv").exists()
    assert len((tmp_path / "runs.jsonl").read_text().splitlines()) == 10


def test_summary_statistics():
    rs = [RunResult(0, 1.0, 0.01, 10, 5.0, True), RunResult(1, 3.0, 0.03, 20, 7.0, False, True, "x")]
    row = summarize(rs)
    assert row["runs"] == 2 and row["terminated"] == 1 and row["failed"] == 1
    assert row["translational_error_cm_mean"] == 2.0
    assert row["translational_error_cm_sd"] == pytest.approx(np.sqrt(2.0))
    assert row["rotational_error_1e-2rad_mean"] == pytest.approx(2.0)
    assert write_csv([row], ["runs", "actions_mean"]) == "runs,actions_mean\n2,15.000000\n"
