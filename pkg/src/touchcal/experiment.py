"""Closed-loop calibration runs, seeded batches and parameter sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .actions import ActionExhausted, ActionHistory, sample_candidates, select_action
from .config import ExperimentConfig, build_config, get_dotted
from .convergence import (
    FilterHistory,
    adapt_sigma,
    consistency_from_distances,
    estimate_distances,
    particle_confidence,
    particle_stability,
    should_terminate,
)
from .filter import (
    Observation,
    WeightDegeneracy,
    estimate_and_variance,
    evaluate_weights,
    init_particles,
    propagate,
    resample,
)
from .geometry import EndEffectorCloud, SdfGrid, build_sdf, sample_cloud
from .se3 import Pose6, rotation_angle
from .world import WorldState, execute_action_detailed, make_world

_GRIDS: dict = {}
MAX_DEGENERATE = 10


@dataclass
class RunResult:
    seed: int
    translational_error_cm: float
    rotational_error_rad: float
    iterations: int
    mean_contacts: float
    terminated: bool
    failed: bool = False
    diagnostic: str = ""
    trace_path: Optional[str] = None
    weights_ms_mean: float = 0.0
    estimate: list = field(default_factory=list)
    truth: list = field(default_factory=list)


def grid_for(cfg: ExperimentConfig) -> SdfGrid:
    """Filter SDF for a config, cached per process by geometry and resolution."""
    res = float(cfg.get("grid.resolution", 0.005))
    pad = float(cfg.get("grid.padding", 0.3))
    interp = cfg.get("grid.interpolation", "nearest")
    cache = cfg.get("grid.cache")
    key = (json.dumps(cfg.raw["env"], sort_keys=True), res, pad)
    if key not in _GRIDS:
        if cache and Path(cache).exists():
            grid = SdfGrid.load(cache)
        else:
            grid = build_sdf(cfg.env, res, pad)
        _GRIDS.clear()  # keep one grid alive; fine grids are large
        _GRIDS[key] = grid
    g = _GRIDS[key]
    return SdfGrid(g.origin, g.resolution, g.dims, g.values, interp) if g.interpolation != interp else g


def clouds_for(cfg: ExperimentConfig) -> tuple[EndEffectorCloud, EndEffectorCloud]:
    seed = int(cfg.get("cloud.seed", 7))
    est = sample_cloud(cfg.ee_model, int(cfg.get("cloud.size", 200)), seed)
    truth = sample_cloud(cfg.ee_model, int(cfg.get("cloud.truth_size", 1000)), seed + 1)
    return est, truth


def pose_errors(estimate: np.ndarray, truth: Pose6) -> tuple[float, float]:
    """Translational error in cm and geodesic rotational error in rad."""
    est = Pose6.from_array(estimate).to_se3()
    tr = truth.to_se3()
    trans = float(np.linalg.norm(est.translation - tr.translation)) * 100.0
    rot = rotation_angle(est.rotation.T @ tr.rotation)
    return trans, rot


def _streams(seed: int) -> dict:
    names = ["world", "particles", "candidates", "actions", "motion", "resample", "execute"]
    kids = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(k) for n, k in zip(names, kids)}


def _tip_length(cloud: EndEffectorCloud) -> float:
    return float(np.max(cloud.points[:, 2]))


class CalibrationLoop:
    """The estimator side of a run: particles, criteria and adaptive noise.

    It sees observations and joint configurations only; the harness owns
    the world and scores the result.
    """

    def __init__(self, cfg: ExperimentConfig, grid: SdfGrid, cloud: EndEffectorCloud, rngs: dict):
        self.cfg = cfg
        self.grid = grid
        self.cloud = cloud
        self.rngs = rngs
        x0 = Pose6.from_array(cfg.get("world.x0"))
        spread = np.broadcast_to(np.asarray(cfg.get("world.error", 0.0), dtype=float), (6,))
        self.particles = init_particles(x0, spread, cfg.filter.M, rngs["particles"])
        self.estimate, self.variance = estimate_and_variance(self.particles)
        self.sigma = cfg.filter.sigma_0
        self.scale = np.asarray(cfg.filter.motion_scale, dtype=float)
        self.history = FilterHistory(cfg.criteria.h)
        self.degenerate = 0
        self.terminated = False

    def step(self, obs: Observation) -> dict:
        cfg, crit = self.cfg, self.cfg.criteria
        sigma_t = self.sigma
        moved = propagate(self.particles, sigma_t * self.scale, self.rngs["motion"])
        t0 = time.perf_counter()
        try:
            weighted = evaluate_weights(moved, obs, self.grid, self.cloud, cfg.chain, cfg.filter, cfg.workers)
        except WeightDegeneracy:
            # no particle explains the data: behave as confident-but-inconsistent
            self.degenerate += 1
            self.particles = moved
            self.history.consecutive_pass_count = 0
            self.sigma = adapt_sigma(sigma_t, 1, 0, 0, crit)
            return {"degenerate": True, "sigma_t": sigma_t, "C": 1, "S": 0, "V": 0,
                    "weights_ms": (time.perf_counter() - t0) * 1e3}
        weights_ms = (time.perf_counter() - t0) * 1e3
        self.estimate, self.variance = estimate_and_variance(weighted)
        ess = weighted.ess()
        self.particles = resample(weighted, self.rngs["resample"])
        self.history.push(self.estimate, self.variance)
        C = particle_confidence(self.variance, crit.theta_V)
        S = particle_stability(self.history, crit.eps_M, crit.eps_V)
        d_est = estimate_distances(self.estimate, obs, self.grid, self.cloud, cfg.chain)
        V = consistency_from_distances(d_est, obs.contacts(), crit.delta_E)
        self.terminated = bool(should_terminate(C, S, V, self.history, crit.consecutive_required))
        self.sigma = adapt_sigma(sigma_t, C, S, V, crit)
        return {
            "degenerate": False,
            "estimate": [float(v) for v in self.estimate],
            "variance": [float(v) for v in self.variance],
            "ess": ess,
            "sigma_t": sigma_t,
            "C": C, "S": S, "V": V,
            "pass_count": self.history.consecutive_pass_count,
            "terminate": self.terminated,
            "estimate_distances": [float(v) for v in d_est],
            "contacts": [int(c) for c in obs.contacts()],
            "weights_ms": weights_ms,
        }


def run_once(cfg: ExperimentConfig, seed: int, trace_dir=None, grid: SdfGrid | None = None) -> RunResult:
    rngs = _streams(seed)
    grid = grid or grid_for(cfg)
    cloud, truth_cloud = clouds_for(cfg)
    x0 = Pose6.from_array(cfg.get("world.x0"))
    world = make_world(cfg.env, x0, cfg.get("world.error", 0.0), cfg.noise, rngs["world"],
                       true_pose=cfg.get("world.true_pose"))
    truth = Pose6.from_se3(world.true_pose)
    candidates = sample_candidates(cfg.env, grid, cfg.candidates, rngs["candidates"])
    loop = CalibrationLoop(cfg, grid, cloud, rngs)
    actions = ActionHistory()
    tip = _tip_length(cloud)

    trace, obs_log = [], []
    contacts, weight_ms = [], []
    failed, diagnostic = False, ""
    iterations = 0
    for t in range(1, cfg.max_iterations + 1):
        belief = Pose6.from_array(loop.estimate).to_se3()
        try:
            action = select_action(candidates, actions, cfg.chain, rngs["actions"], base_pose=belief,
                                   tip_length=tip, standoff=float(cfg.get("action.standoff", 0.03)),
                                   p_switch=float(cfg.get("action.p_switch", 0.1)),
                                   tie_break=cfg.get("action.tie_break", "index"))
        except ActionExhausted as exc:
            failed, diagnostic = True, f"action exhaustion at t={t}: {exc}"
            break
        obs, n_slide = execute_action_detailed(world, action, cfg.chain, truth_cloud, rngs["execute"])
        actions.append(action.candidate)
        iterations = t
        rec = loop.step(obs)
        weight_ms.append(rec["weights_ms"])
        if n_slide:
            contacts.append(n_slide)
        rec.update({"t": t, "reference": action.candidate.to_dict(), "J_t": len(obs),
                    "slide_events": n_slide})
        trace.append(rec)
        obs_log.append({"t": t, "reference": action.candidate.to_dict(), "observation": obs.to_dict()})
        if loop.degenerate > MAX_DEGENERATE:
            failed, diagnostic = True, "persistent weight degeneracy"
            break
        if loop.terminated:
            break

    trans, rot = pose_errors(loop.estimate, truth)
    trace_path = None
    if trace_dir is not None:
        trace_dir = Path(trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        trace_path = str(trace_dir / f"trace_seed{seed}.jsonl")
        with open(trace_path, "w") as fh:
            for rec in trace:
                fh.write(json.dumps(rec) + "\n")
        with open(trace_dir / f"observations_seed{seed}.jsonl", "w") as fh:
            for rec in obs_log:
                fh.write(json.dumps(rec) + "\n")
    return RunResult(
        seed=int(seed),
        translational_error_cm=trans,
        rotational_error_rad=rot,
        iterations=iterations,
        mean_contacts=float(np.mean(contacts)) if contacts else 0.0,
        terminated=loop.terminated,
        failed=failed,
        diagnostic=diagnostic,
        trace_path=trace_path,
        weights_ms_mean=float(np.mean(weight_ms)) if weight_ms else 0.0,
        estimate=[float(v) for v in loop.estimate],
        truth=truth.to_list(),
    )


def replay(cfg: ExperimentConfig, records, seed: int = 0, truth=None) -> dict:
    """Feed logged observations to the estimator, bypassing the simulator."""
    rngs = _streams(seed)
    grid = grid_for(cfg)
    cloud, _ = clouds_for(cfg)
    loop = CalibrationLoop(cfg, grid, cloud, rngs)
    steps = []
    for rec in records:
        obs = rec["observation"]
        if not isinstance(obs, Observation):
            obs = Observation.from_dict(obs)
        steps.append(loop.step(obs))
        if loop.terminated:
            break
    out = {"estimate": [float(v) for v in loop.estimate], "iterations": len(steps),
           "terminated": loop.terminated, "steps": steps}
    if truth is not None:
        out["translational_error_cm"], out["rotational_error_rad"] = pose_errors(
            loop.estimate, truth if isinstance(truth, Pose6) else Pose6.from_array(truth))
    return out


# --------------------------------------------------------------------------- #
# sweeps

SUMMARY_FIELDS = [
    "runs", "terminated", "failed",
    "translational_error_cm_mean", "translational_error_cm_sd",
    "rotational_error_1e-2rad_mean", "rotational_error_1e-2rad_sd",
    "actions_mean", "actions_sd",
    "contacts_mean", "contacts_sd",
]


def sweep_cells(sweep: Optional[dict]) -> list[dict]:
    if not sweep:
        return [{}]
    keys = list(sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(sweep[k] for k in keys))]


def _run_job(args):
    raw, seed, trace_dir = args
    return run_once(build_config(raw), seed, trace_dir)


def run_many(jobs: list, processes: int = 1) -> list[RunResult]:
    """Run ``(raw_config, seed, trace_dir)`` jobs, preserving job order."""
    if processes <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=processes) as pool:
        return list(pool.map(_run_job, jobs, chunksize=1))


def _mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def summarize(results: list[RunResult]) -> dict:
    row = {"runs": len(results), "terminated": sum(r.terminated for r in results),
           "failed": sum(r.failed for r in results)}
    for name, vals in [
        ("translational_error_cm", [r.translational_error_cm for r in results]),
        ("rotational_error_1e-2rad", [100.0 * r.rotational_error_rad for r in results]),
        ("actions", [r.iterations for r in results]),
        ("contacts", [r.mean_contacts for r in results]),
    ]:
        row[f"{name}_mean"], row[f"{name}_sd"] = _mean_sd(vals)
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(rows: list[dict], fields: list[str], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row.get(f, "")) for f in fields])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass
class SweepResult:
    rows: list
    fields: list
    results: dict  # cell index -> list[RunResult]
    timing_rows: list

    def csv(self) -> str:
        return write_csv(self.rows, self.fields)


def run_sweep(cfg: ExperimentConfig, out_dir=None, processes: int = 1, seeds=None) -> SweepResult:
    """Every sweep cell crossed with every seed; one summary row per cell.

    The summary CSV is deterministic for a given config; wall-clock timings
    go to a separate timing table.
    """
    cells = sweep_cells(cfg.sweep)
    keys = list(cfg.sweep or {})
    seeds = list(seeds if seeds is not None else cfg.seeds)
    jobs, where = [], []
    for ci, cell in enumerate(cells):
        raw = cfg.with_overrides(cell).raw
        raw.pop("sweep", None)
        for s in seeds:
            tdir = None if out_dir is None else str(Path(out_dir) / f"cell{ci:03d}")
            jobs.append((raw, s, tdir))
            where.append(ci)
    flat = run_many(jobs, processes)
    by_cell: dict = {i: [] for i in range(len(cells))}
    for ci, res in zip(where, flat):
        by_cell[ci].append(res)
    rows, timing = [], []
    for ci, cell in enumerate(cells):
        row = {k: cell[k] for k in keys}
        row.update(summarize(by_cell[ci]))
        rows.append(row)
        t = [r.weights_ms_mean for r in by_cell[ci]]
        timing.append({**{k: cell[k] for k in keys}, "weights_ms_mean": float(np.mean(t)),
                       "weights_ms_sd": float(np.std(t, ddof=1)) if len(t) > 1 else 0.0})
    fields = keys + SUMMARY_FIELDS
    result = SweepResult(rows, fields, by_cell, timing)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, fields, out / "summary.csv")
        write_csv(timing, keys + ["weights_ms_mean", "weights_ms_sd"], out / "timing.csv")
        with open(out / "runs.jsonl", "w") as fh:
            for ci in range(len(cells)):
                for r in by_cell[ci]:
                    fh.write(json.dumps({"cell": ci, **asdict(r)}) + "\n")
    return result
