"""Particle filter over robot base poses driven by binary contact events."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _kernels
from .geometry import EndEffectorCloud, SdfGrid
from .kinematics import KinematicChain
from .se3 import Pose6, dimwise_variance_array, perturb_array, weighted_mean_array, wrap_angle


class WeightDegeneracy(RuntimeError):
    """Every particle weight vanished; the caller should re-spread."""


@dataclass
class FilterParams:
    sigma_P: float = 0.005
    delta_P: float = 0.01
    epsilon: float = 1e-12
    M: int = 10_000
    sigma_0: float = 0.01
    # per-dimension multiplier on sigma_t in the motion model
    motion_scale: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    # use the exponent as printed, exp(-d^2 / (2 sigma_P)), instead of the variance form
    literal_exponent: bool = False

    def __post_init__(self):
        for name in ("sigma_P", "delta_P", "epsilon", "sigma_0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.epsilon >= 1:
            raise ValueError("epsilon must be much smaller than 1")


@dataclass
class ParticleSet:
    poses: np.ndarray
    weights: np.ndarray
    generation: int = 0

    def __len__(self) -> int:
        return len(self.weights)

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


@dataclass(frozen=True)
class ContactEvent:
    q: np.ndarray
    c: int


@dataclass
class Observation:
    events: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def configs(self) -> np.ndarray:
        return np.array([e.q for e in self.events], dtype=float)

    def contacts(self) -> np.ndarray:
        return np.array([e.c for e in self.events], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"events": [{"q": [float(v) for v in e.q], "c": int(e.c)} for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls([ContactEvent(np.asarray(e["q"], dtype=float), int(e["c"])) for e in d["events"]])


def _rng(seed):
    # anything that already behaves like a generator is used as-is
    return seed if hasattr(seed, "standard_normal") else np.random.default_rng(seed)


def init_particles(x0: Pose6, spread, M: int, seed) -> ParticleSet:
    """M poses uniform in ``x0 +/- spread`` (per dimension), equal weights."""
    spread = np.broadcast_to(np.asarray(spread, dtype=float), (6,))
    if M < 1:
        raise ValueError("M must be at least 1")
    if np.any(spread < 0):
        raise ValueError("spread must be non-negative")
    rng = _rng(seed)
    poses = x0.to_array() + rng.uniform(-1.0, 1.0, size=(M, 6)) * spread
    poses[:, 3:] = wrap_angle(poses[:, 3:])
    return ParticleSet(poses, np.full(M, 1.0 / M), 0)


def propagate(ps: ParticleSet, sigma_t, seed) -> ParticleSet:
    poses = perturb_array(ps.poses, sigma_t, _rng(seed))
    return ParticleSet(poses, ps.weights.copy(), ps.generation + 1)


@lru_cache(maxsize=8)
def _pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="weights")


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def observation_transforms(obs: Observation, chain: KinematicChain) -> np.ndarray:
    return np.ascontiguousarray([chain.forward_matrix(e.q) for e in obs.events])


def log_likelihoods(poses, obs: Observation, grid: SdfGrid, cloud: EndEffectorCloud,
                    chain: KinematicChain, params: FilterParams, workers: int = 1) -> np.ndarray:
    """Per-particle log of the product of event likelihoods (unnormalized)."""
    if len(obs) == 0:
        raise ValueError("observation has no events")
    poses = np.ascontiguousarray(poses, dtype=float)
    ee = observation_transforms(obs, chain)
    contact = np.ascontiguousarray(obs.contacts())
    out = np.empty(len(poses))
    args = (poses, ee, contact, cloud.points, grid.values, grid.origin, grid.resolution, grid.dims,
            grid.mode, params.sigma_P, params.delta_P, math.log(params.epsilon), params.literal_exponent)
    if workers <= 1:
        _kernels.log_weights(*args, 0, len(poses), out)
    else:
        jobs = [_pool(workers).submit(_kernels.log_weights, *args, a, b, out)
                for a, b in _split(len(poses), workers)]
        for j in jobs:
            j.result()
    return out


def normalize_log(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightDegeneracy("all particle weights are zero")
    w = np.exp(logw - top)
    return w / w.sum()


def evaluate_weights(ps: ParticleSet, obs: Observation, grid: SdfGrid, cloud: EndEffectorCloud,
                     chain: KinematicChain, params: FilterParams, workers: int = 1) -> ParticleSet:
    """Reweight by the contact likelihood of ``obs`` and normalize.

    The likelihood multiplies onto the incoming weights; after resampling
    those are uniform, so this is the plain per-iteration rule.
    """
    logw = log_likelihoods(ps.poses, obs, grid, cloud, chain, params, workers)
    with np.errstate(divide="ignore"):
        logw = logw + np.log(ps.weights)
    return replace(ps, weights=normalize_log(logw))


def systematic_indices(weights, rng) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if n == 0 or not np.isfinite(w.sum()) or w.sum() <= 0:
        raise WeightDegeneracy("cannot resample degenerate weights")
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    positions = (rng.uniform() + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right")


def resample(ps: ParticleSet, seed) -> ParticleSet:
    """Systematic (low-variance) resampling to uniform weights."""
    idx = systematic_indices(ps.weights, _rng(seed))
    M = len(ps)
    return ParticleSet(ps.poses[idx].copy(), np.full(M, 1.0 / M), ps.generation)


def estimate(ps: ParticleSet) -> Pose6:
    return Pose6.from_array(weighted_mean_array(ps.poses, ps.weights))


def estimate_and_variance(ps: ParticleSet) -> tuple[np.ndarray, np.ndarray]:
    mean = weighted_mean_array(ps.poses, ps.weights)
    return mean, dimwise_variance_array(ps.poses, ps.weights, mean)
