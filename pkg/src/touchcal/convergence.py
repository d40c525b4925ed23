"""Self-verification: confidence, stability and consistency checks, adaptive
motion noise and the termination counter."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .filter import Observation, observation_transforms
from .geometry import batch_min_distances


def _vec6(v) -> tuple:
    return tuple(float(x) for x in np.broadcast_to(np.asarray(v, dtype=float), (6,)))


@dataclass
class CriteriaConfig:
    theta_V: tuple = (1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5)
    eps_M: tuple = (0.002, 0.002, 0.002, 0.005, 0.005, 0.005)
    eps_V: tuple = (5e-6,) * 6
    h: int = 5
    delta_E: float = 0.01
    consecutive_required: int = 5
    alpha: float = 2.0
    beta: float = 0.8
    sigma_min: float = 1e-4
    sigma_max: float = 0.05

    def __post_init__(self):
        self.theta_V = _vec6(self.theta_V)
        self.eps_M = _vec6(self.eps_M)
        self.eps_V = _vec6(self.eps_V)
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.h < 2:
            raise ValueError("window h must be at least 2")
        if self.consecutive_required < 1:
            raise ValueError("consecutive_required must be at least 1")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")


@dataclass
class FilterHistory:
    h: int = 5
    estimates: deque = field(default=None)
    variances: deque = field(default=None)
    consecutive_pass_count: int = 0

    def __post_init__(self):
        self.estimates = deque(maxlen=self.h)
        self.variances = deque(maxlen=self.h)

    def push(self, estimate, variance) -> None:
        self.estimates.append(np.asarray(estimate, dtype=float).copy())
        self.variances.append(np.asarray(variance, dtype=float).copy())

    def __len__(self) -> int:
        return len(self.estimates)


def particle_confidence(variance, theta_V) -> int:
    return int(np.all(np.asarray(variance) < np.asarray(theta_V)))


def _angle_range(a: np.ndarray) -> np.ndarray:
    # range of angles measured around their first element, so a window
    # straddling +/-pi is not mistaken for a 2*pi spread
    d = np.mod(a - a[0] + np.pi, 2.0 * np.pi) - np.pi
    return d.max(axis=0) - d.min(axis=0)


def particle_stability(history: FilterHistory, eps_M, eps_V) -> int:
    if len(history) < history.h:
        return 0
    est = np.array(history.estimates)
    var = np.array(history.variances)
    ran_m = np.concatenate([np.ptp(est[:, :3], axis=0), _angle_range(est[:, 3:])])
    ran_v = np.ptp(var, axis=0)
    return int(np.all(ran_m < np.asarray(eps_M)) and np.all(ran_v < np.asarray(eps_V)))


def estimate_distances(estimate, obs: Observation, grid, cloud, chain) -> np.ndarray:
    ee = observation_transforms(obs, chain)
    return batch_min_distances(grid, cloud, np.asarray(estimate, dtype=float)[None, :], ee)[0]


def consistency_from_distances(d, contacts, delta_E: float) -> int:
    d = np.asarray(d, dtype=float)
    c = np.asarray(contacts)
    bad = ((c == 1) & (d > delta_E)) | ((c == 0) & (d <= -delta_E))
    return int(not bad.any())


def particle_consistency(estimate, obs: Observation, grid, cloud, chain, delta_E: float) -> int:
    """1 iff the pose estimate agrees with every event of the latest observation."""
    if len(obs) == 0:
        raise ValueError("observation has no events")
    est = estimate.to_array() if hasattr(estimate, "to_array") else estimate
    d = estimate_distances(est, obs, grid, cloud, chain)
    return consistency_from_distances(d, obs.contacts(), delta_E)


def adapt_sigma(sigma_prev: float, C: int, S: int, V: int, cfg: CriteriaConfig) -> float:
    if sigma_prev <= 0:
        raise ValueError("sigma must be positive")
    if C and not V:
        sigma = cfg.alpha * sigma_prev
    elif S and V:
        sigma = cfg.beta * sigma_prev
    else:
        sigma = sigma_prev
    return float(min(max(sigma, cfg.sigma_min), cfg.sigma_max))


def should_terminate(C: int, S: int, V: int, state: FilterHistory, consecutive_required: int = 5) -> int:
    if C and S and V:
        state.consecutive_pass_count += 1
    else:
        state.consecutive_pass_count = 0
    return int(state.consecutive_pass_count >= consecutive_required)
