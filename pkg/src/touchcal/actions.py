"""Contact candidates on environment segments and sparsity-driven action choice."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import EnvironmentModel
from .kinematics import KinematicChain, inverse_reach
from .se3 import PoseSE3, inverse

EMPTY_SPARSITY = np.pi + 1.0
UPWARD_LIMIT = -0.2


class ActionExhausted(RuntimeError):
    """No feasible contact candidate is left in any segment."""


@dataclass(frozen=True)
class ContactCandidate:
    r: np.ndarray
    n: np.ndarray
    segment_id: int
    index: int = -1

    def to_dict(self) -> dict:
        return {"r": [float(v) for v in self.r], "n": [float(v) for v in self.n],
                "segment_id": int(self.segment_id)}


@dataclass
class ActionHistory:
    """Reference contacts of the actions executed so far (append-only)."""

    executed: list = field(default_factory=list)

    def append(self, candidate: ContactCandidate) -> None:
        self.executed.append(candidate)

    def normals(self) -> np.ndarray:
        return np.array([c.n for c in self.executed], dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.executed)


@dataclass
class SlidingAction:
    """A chosen reference contact with the joint configuration of its pre-touch pose."""

    candidate: ContactCandidate
    approach_q: np.ndarray
    pretouch: PoseSE3  # end-effector pose in the robot base frame


def sample_candidates(env: EnvironmentModel, grid, total: int, seed) -> list[ContactCandidate]:
    """``total`` surface contacts split across segments in proportion to area.

    Only surfaces with ``n . z > -0.2`` are kept so the robot can reach
    them from above or the side.  ``grid`` is accepted for signature parity
    and is not needed because primitive normals are analytic.
    """
    if total < 1:
        raise ValueError("need at least one candidate")
    rng = np.random.default_rng(seed)
    segs = env.segment_ids
    areas = np.array([env.segment_area(s) for s in segs])
    if np.any(areas <= 0):
        raise ValueError("segment with zero samplable area")
    # largest-remainder apportionment so counts sum to total exactly
    share = total * areas / areas.sum()
    counts = np.floor(share).astype(int)
    for k in np.argsort(-(share - counts), kind="stable")[: total - counts.sum()]:
        counts[k] += 1
    keep = lambda p, n: n[:, 2] > UPWARD_LIMIT  # noqa: E731
    out = []
    for seg, cnt in zip(segs, counts):
        if cnt == 0:
            continue
        pts, nrm = env.surface_samples(seg, int(cnt), rng, keep=keep)
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        for p, n in zip(pts, nrm):
            out.append(ContactCandidate(p, n, int(seg), len(out)))
    return out


def export_candidates(candidates, path) -> None:
    with open(path, "w") as fh:
        for c in candidates:
            fh.write(json.dumps(c.to_dict()) + "\n")


def sparsity_array(normals: np.ndarray, history: ActionHistory) -> np.ndarray:
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(history) == 0:
        return np.full(len(normals), EMPTY_SPARSITY)
    dots = np.clip(normals @ history.normals().T, -1.0, 1.0)
    return np.arccos(dots).min(axis=1)


def local_sparsity(candidate: ContactCandidate, history: ActionHistory) -> float:
    """Smallest angle between the candidate normal and any executed normal."""
    return float(sparsity_array(candidate.n, history)[0])


def tool_frame(n: np.ndarray, r: np.ndarray, base_xy: np.ndarray) -> np.ndarray:
    """Rotation whose z axis is anti-parallel to the surface normal."""
    z = -np.asarray(n, dtype=float)
    z /= np.linalg.norm(z)
    if abs(z[2]) < 0.9:
        ref = np.array([0.0, 0.0, -1.0])
    else:
        ref = np.array([r[0] - base_xy[0], r[1] - base_xy[1], 0.0])
        if np.linalg.norm(ref) < 1e-6:
            ref = np.array([1.0, 0.0, 0.0])
    x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(z, x), z])


def pretouch_pose(candidate: ContactCandidate, base_pose: PoseSE3, tip_length: float,
                  standoff: float = 0.03) -> PoseSE3:
    """End-effector pose, in the believed base frame, hovering over the contact."""
    R = tool_frame(candidate.n, candidate.r, base_pose.translation)
    p = candidate.r + candidate.n * (standoff + tip_length)
    return inverse(base_pose) @ PoseSE3(R, p)


def select_action(candidates, history: ActionHistory, chain: KinematicChain, rng,
                  base_pose: Optional[PoseSE3] = None, tip_length: float = 0.0,
                  standoff: float = 0.03, p_switch: float = 0.1, q_seed=None,
                  ik_restarts: int = 5, tie_break: str = "index") -> SlidingAction:
    """Pick the feasible candidate of maximal local sparsity in a random segment.

    Segments are drawn uniformly.  Candidates are tried in descending
    sparsity; after each infeasible one the search moves to another open
    segment with probability ``p_switch``, and an exhausted segment always
    hands over to a random open one.

    Flat faces make exact sparsity ties common.  ``tie_break="index"`` tries
    tied candidates by lowest index, which keeps re-selecting the same
    contact once a face has been touched; ``"random"`` orders them by a
    permutation drawn from ``rng``.
    """
    if tie_break not in ("index", "random"):
        raise ValueError(f"unknown tie_break {tie_break!r}")
    if not candidates:
        raise ValueError("no candidates")
    base_pose = base_pose if base_pose is not None else PoseSE3.identity()
    normals = np.array([c.n for c in candidates])
    seg_of = np.array([c.segment_id for c in candidates])
    rho = sparsity_array(normals, history)
    idx = np.arange(len(candidates))
    tie = rng.permutation(len(candidates)) if tie_break == "random" else idx
    order = {}
    for s in np.unique(seg_of):
        members = idx[seg_of == s]
        order[int(s)] = list(members[np.lexsort((tie[members], -rho[members]))])
    open_segs = sorted(order)
    seg = open_segs[int(rng.integers(len(open_segs)))]
    while True:
        queue = order[seg]
        while queue:
            k = queue.pop(0)
            cand = candidates[k]
            target = pretouch_pose(cand, base_pose, tip_length, standoff)
            q = inverse_reach(chain, target, q0=q_seed, rng=rng, restarts=ik_restarts, axis_only=True)
            if q is not None:
                return SlidingAction(cand, q, chain.forward(q))
            if len(open_segs) > 1 and rng.uniform() < p_switch:
                break
        if not queue:
            open_segs.remove(seg)
        if not open_segs:
            raise ActionExhausted("no reachable contact candidate in any segment")
        others = [s for s in open_segs if s != seg] or open_segs
        seg = others[int(rng.integers(len(others)))]
