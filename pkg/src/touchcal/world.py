"""Ground-truth world that executes touch-and-slide actions and reports
joint-space contact events.

The estimator only ever sees the ``Observation`` values returned here; the
true base pose and the exact geometry stay inside ``WorldState``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .actions import SlidingAction
from .filter import ContactEvent, Observation
from .geometry import EndEffectorCloud, EnvironmentModel
from .kinematics import KinematicChain, inverse_reach
from .se3 import Pose6, PoseSE3, wrap_angle

DESCENT_STEP = 0.001
LOST_CONTACT = 0.02
PROJECTION_ITERS = 8


@dataclass
class NoiseConfig:
    contact_threshold: float = 0.002
    q_noise_sd: float = 1e-3
    false_negative_rate: float = 0.02
    false_positive_rate: float = 0.02
    step_interval: float = 0.01
    max_slide: float = 0.15
    # how far past the pre-touch pose the robot keeps descending before giving up
    descent_budget: float = 0.15

    def __post_init__(self):
        for name in ("false_negative_rate", "false_positive_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.step_interval <= 0 or self.max_slide < 0 or self.contact_threshold <= 0:
            raise ValueError("bad noise configuration")


@dataclass
class WorldState:
    true_pose: PoseSE3
    env: EnvironmentModel
    noise: NoiseConfig
    x0: Pose6 = field(default_factory=Pose6)
    # exact signed distance of the environment; anything with .query(points)
    truth: object = None

    def __post_init__(self):
        if self.truth is None:
            self.truth = self.env

    def true_distance(self, ee_base: np.ndarray, cloud: EndEffectorCloud) -> float:
        """Smallest true signed distance of the cloud at a base-frame tool pose."""
        T = self.true_pose.matrix() @ ee_base
        pts = cloud.points @ T[:3, :3].T + T[:3, 3]
        return float(np.min(self.truth.query(pts)))


def make_world(env: EnvironmentModel, x0, error=None, noise: NoiseConfig | None = None,
               seed=0, true_pose=None) -> WorldState:
    """World with the true base pose drawn as ``x0 + U(-error, error)`` per
    dimension, or fixed to ``true_pose`` when given."""
    x0 = x0 if isinstance(x0, Pose6) else Pose6.from_array(x0)
    if true_pose is not None:
        truth = true_pose if isinstance(true_pose, Pose6) else Pose6.from_array(true_pose)
    else:
        e = np.broadcast_to(np.asarray(0.0 if error is None else error, dtype=float), (6,))
        if np.any(e < 0):
            raise ValueError("error interval must be non-negative")
        rng = np.random.default_rng(seed)
        v = x0.to_array() + rng.uniform(-1.0, 1.0, 6) * e
        v[3:] = wrap_angle(v[3:])
        truth = Pose6.from_array(v)
    return WorldState(truth.to_se3(), env, noise or NoiseConfig(), x0)


def _horizontal_tangent(press: np.ndarray, rng) -> np.ndarray:
    for _ in range(100):
        phi = rng.uniform(0.0, 2.0 * np.pi)
        h = np.array([np.cos(phi), np.sin(phi), 0.0])
        t = h - (h @ press) * press
        n = np.linalg.norm(t)
        if n > 0.1:
            return t / n
    raise RuntimeError("could not find a slide direction")


class _Executor:
    def __init__(self, world: WorldState, chain: KinematicChain, cloud: EndEffectorCloud, rng):
        self.world = world
        self.chain = chain
        self.cloud = cloud
        self.rng = rng
        self.noise = world.noise
        self.events: list[ContactEvent] = []
        self.slide_events = 0

    def dist(self, R, p) -> float:
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = p
        return self.world.true_distance(T, self.cloud)

    def solve(self, R, p, q_prev):
        return inverse_reach(self.chain, PoseSE3(R, p), q0=q_prev, rng=self.rng, restarts=2)

    def record(self, q, touching: bool, slide: bool) -> None:
        nz = self.noise
        flip = nz.false_negative_rate if touching else nz.false_positive_rate
        c = int(touching) ^ int(self.rng.uniform() < flip)
        q_obs = q + self.rng.normal(0.0, nz.q_noise_sd, size=q.shape) if nz.q_noise_sd > 0 else q.copy()
        self.events.append(ContactEvent(q_obs, c))
        self.slide_events += int(slide)


def execute_action(world: WorldState, action: SlidingAction, chain: KinematicChain,
                   cloud: EndEffectorCloud, rng) -> Observation:
    obs, _ = execute_action_detailed(world, action, chain, cloud, rng)
    return obs


def execute_action_detailed(world: WorldState, action: SlidingAction, chain: KinematicChain,
                            cloud: EndEffectorCloud, rng) -> tuple[Observation, int]:
    """Simulate one touch-and-slide action.

    Returns the observation and the number of slide-phase events in it.
    The tool keeps the orientation of its approach pose; it descends along
    its own z axis, then slides along a random horizontal direction
    projected onto the plane normal to that axis, re-pressing onto the true
    surface after every step.
    """
    ex = _Executor(world, chain, cloud, rng)
    nz = world.noise
    thr = nz.contact_threshold
    T0 = chain.forward_matrix(action.approach_q)
    R = T0[:3, :3]
    press = R[:, 2]
    p = T0[:3, 3].copy()
    q = np.asarray(action.approach_q, dtype=float).copy()

    # compliant retreat if the approach pose already collides
    d = ex.dist(R, p)
    backed = 0.0
    while d <= thr and backed < nz.descent_budget:
        p = p - DESCENT_STEP * press
        backed += DESCENT_STEP
        d = ex.dist(R, p)

    # descend until the true distance trips the contact threshold
    travelled = 0.0
    samples = [p.copy()]
    next_sample = nz.step_interval
    while d > thr and travelled < nz.descent_budget:
        p = p + DESCENT_STEP * press
        travelled += DESCENT_STEP
        d = ex.dist(R, p)
        if travelled >= next_sample - 1e-12:
            samples.append(p.copy())
            next_sample += nz.step_interval
    if d > thr:
        for s in samples:
            qs = ex.solve(R, s, q)
            if qs is None:
                break
            q = qs
            ex.record(q, False, False)
        if not ex.events:
            ex.record(q, False, False)
        return Observation(ex.events), 0

    q_touch = ex.solve(R, p, q)
    if q_touch is None:
        # the touch pose itself is out of reach; report the approach as a miss
        ex.record(q, False, False)
        return Observation(ex.events), 0
    q = q_touch
    ex.record(q, True, True)

    tangent = _horizontal_tangent(press, rng)
    target = -0.5 * thr
    slid = 0.0
    while slid < nz.max_slide - 1e-9:
        base = p + nz.step_interval * tangent
        slid += nz.step_interval
        offset = 0.0
        d = ex.dist(R, base)
        for _ in range(PROJECTION_ITERS):
            if abs(d - target) < 1e-4:
                break
            offset = float(np.clip(offset + (d - target), -LOST_CONTACT, LOST_CONTACT))
            d = ex.dist(R, base + offset * press)
        if d > thr:
            # surface fell away: one last free-space event where contact was lost
            qs = ex.solve(R, base, q)
            if qs is not None:
                ex.record(qs, False, True)
            break
        if d < -thr:
            break  # blocked by a wall the compliant press cannot clear
        p = base + offset * press
        qs = ex.solve(R, p, q)
        if qs is None:
            break
        q = qs
        ex.record(q, True, True)
    return Observation(ex.events), ex.slide_events


def save_observations(records, path) -> None:
    """JSONL: one ``{"t", "reference", "observation"}`` object per action."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_observations(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rec["observation"] = Observation.from_dict(rec["observation"])
                out.append(rec)
    return out
