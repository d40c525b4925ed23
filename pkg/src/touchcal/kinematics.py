"""Serial-chain forward kinematics and damped-least-squares inverse kinematics.

Each joint is described by a fixed transform from the previous joint frame
followed by a motion about (revolute) or along (prismatic) a unit axis
expressed in the post-fixed-transform frame.  An optional tool transform is
appended after the last joint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .se3 import Pose6, PoseSE3, rotation_log

POS_TOL = 1e-4
ROT_TOL = 1e-3


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class JointSpec:
    axis: np.ndarray
    kind: str = "revolute"
    fixed_transform: PoseSE3 = field(default_factory=PoseSE3.identity)
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError(f"joint axis {axis} is not unit length")
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)

    def motion(self, q: float) -> np.ndarray:
        T = np.eye(4)
        if self.kind == "revolute":
            T[:3, :3] = _axis_angle_matrix(self.axis, q)
        else:
            T[:3, 3] = self.axis * q
        return T


class KinematicChain:
    def __init__(self, joints: Sequence[JointSpec], tool: PoseSE3 | None = None, name: str = "",
                 home=None):
        if len(joints) < 1:
            raise ValueError("a chain needs at least one joint")
        self.joints = tuple(joints)
        self.home = np.zeros(len(self.joints)) if home is None else np.asarray(home, dtype=float)
        self.tool = tool if tool is not None else PoseSE3.identity()
        self.name = name
        self._fixed = [j.fixed_transform.matrix() for j in self.joints]
        self._tool = self.tool.matrix()
        self._fixed_arr = np.ascontiguousarray(self._fixed)
        self._axes = np.ascontiguousarray([j.axis for j in self.joints])
        self._prismatic = np.array([j.kind == "prismatic" for j in self.joints])
        self.lower = np.array([-np.inf if j.lower is None else j.lower for j in self.joints])
        self.upper = np.array([np.inf if j.upper is None else j.upper for j in self.joints])

    @property
    def dof(self) -> int:
        return len(self.joints)

    def reach(self) -> float:
        """Upper bound on the distance from the base origin to the tool."""
        r = sum(np.linalg.norm(j.fixed_transform.translation) for j in self.joints)
        r += np.linalg.norm(self.tool.translation)
        for j in self.joints:
            if j.kind == "prismatic":
                lo = np.inf if j.lower is None else abs(j.lower)
                hi = np.inf if j.upper is None else abs(j.upper)
                r += max(lo, hi)
        return float(r)

    def _check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dof:
            raise ValueError(f"expected {self.dof} joint values, got {q.shape[0]}")
        return q

    def forward_matrix(self, q) -> np.ndarray:
        q = self._check(q)
        T = np.eye(4)
        for fixed, joint, qi in zip(self._fixed, self.joints, q):
            T = T @ fixed @ joint.motion(qi)
        return T @ self._tool

    def forward(self, q) -> PoseSE3:
        return PoseSE3.from_matrix(self.forward_matrix(q))

    def forward_and_jacobian(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Tool transform and 6xN geometric Jacobian (linear rows first)."""
        q = self._check(q)
        T = np.eye(4)
        axes = np.empty((self.dof, 3))
        origins = np.empty((self.dof, 3))
        for i, (fixed, joint, qi) in enumerate(zip(self._fixed, self.joints, q)):
            T = T @ fixed
            axes[i] = T[:3, :3] @ joint.axis
            origins[i] = T[:3, 3]
            T = T @ joint.motion(qi)
        T = T @ self._tool
        p = T[:3, 3]
        J = np.zeros((6, self.dof))
        for i, joint in enumerate(self.joints):
            if joint.kind == "revolute":
                J[:3, i] = np.cross(axes[i], p - origins[i])
                J[3:, i] = axes[i]
            else:
                J[:3, i] = axes[i]
        return T, J

    def random_config(self, rng) -> np.ndarray:
        lo = np.where(np.isfinite(self.lower), self.lower, -np.pi)
        hi = np.where(np.isfinite(self.upper), self.upper, np.pi)
        return rng.uniform(lo, hi)


def forward(chain: KinematicChain, q) -> PoseSE3:
    return chain.forward(q)


def pose_error(T: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float, float]:
    dp = target[:3, 3] - T[:3, 3]
    dr = rotation_log(target[:3, :3] @ T[:3, :3].T)
    return np.concatenate([dp, dr]), float(np.linalg.norm(dp)), float(np.linalg.norm(dr))


def axis_error(T: np.ndarray, target: np.ndarray) -> float:
    c = float(np.clip(T[:3, 2] @ target[:3, 2], -1.0, 1.0))
    return float(np.arccos(c))


@njit(cache=True)
def _fk_jac(fixed, axes, prismatic, tool, q, T, J):
    n = q.shape[0]
    T[:, :] = np.eye(4)
    origins = np.empty((n, 3))
    waxes = np.empty((n, 3))
    M = np.eye(4)
    for i in range(n):
        T[:, :] = T @ fixed[i]
        a = axes[i]
        waxes[i] = T[:3, :3] @ a
        origins[i] = T[:3, 3]
        M[:, :] = np.eye(4)
        if prismatic[i]:
            M[:3, 3] = a * q[i]
        else:
            c, s = np.cos(q[i]), np.sin(q[i])
            C = 1.0 - c
            x, y, z = a[0], a[1], a[2]
            M[0, 0] = c + x * x * C
            M[0, 1] = x * y * C - z * s
            M[0, 2] = x * z * C + y * s
            M[1, 0] = y * x * C + z * s
            M[1, 1] = c + y * y * C
            M[1, 2] = y * z * C - x * s
            M[2, 0] = z * x * C - y * s
            M[2, 1] = z * y * C + x * s
            M[2, 2] = c + z * z * C
        T[:, :] = T @ M
    T[:, :] = T @ tool
    p = T[:3, 3]
    for i in range(n):
        if prismatic[i]:
            J[:3, i] = waxes[i]
            J[3:, i] = 0.0
        else:
            J[:3, i] = np.cross(waxes[i], p - origins[i])
            J[3:, i] = waxes[i]


@njit(cache=True)
def _rot_err(Rc, Rt, axis_only, out):
    if axis_only:
        zc = Rc[:, 2]
        zt = Rt[:, 2]
        w = np.cross(zc, zt)
        s = np.sqrt(w @ w)
        c = min(max(zc @ zt, -1.0), 1.0)
        ang = np.arctan2(s, c)
        if s > 1e-12:
            out[:] = w * (ang / s)
        elif c < 0.0:
            # anti-parallel: rotate about any axis normal to zc
            out[:] = Rc[:, 0] * np.pi
        else:
            out[:] = 0.0
        return ang
    E = Rt @ Rc.T
    c = min(max((E[0, 0] + E[1, 1] + E[2, 2] - 1.0) / 2.0, -1.0), 1.0)
    ang = np.arccos(c)
    out[0] = E[2, 1] - E[1, 2]
    out[1] = E[0, 2] - E[2, 0]
    out[2] = E[1, 0] - E[0, 1]
    s = np.sin(ang)
    if ang < 1e-7:
        out[:] = 0.5 * out
    elif s > 1e-6:
        out[:] = out * (ang / (2.0 * s))
    else:
        B = (E + np.eye(3)) / 2.0
        k = 0
        for i in range(1, 3):
            if B[i, i] > B[k, k]:
                k = i
        ax = B[:, k] / np.sqrt(B[k, k])
        out[:] = ax * ang
    return ang


@njit(cache=True)
def _dls(fixed, axes, prismatic, tool, lower, upper, target, q, damping, max_iter,
         max_step, pos_goal, rot_goal, axis_only):
    n = q.shape[0]
    T = np.empty((4, 4))
    J = np.empty((6, n))
    e = np.empty(6)
    er = np.empty(3)
    best = np.inf
    stall = 0
    A = np.empty((6, 6))
    for it in range(max_iter):
        _fk_jac(fixed, axes, prismatic, tool, q, T, J)
        e[:3] = target[:3, 3] - T[:3, 3]
        ang = _rot_err(T[:3, :3], target[:3, :3], axis_only, er)
        e[3:] = er
        ep = np.sqrt(e[0] ** 2 + e[1] ** 2 + e[2] ** 2)
        if ep < pos_goal and ang < rot_goal:
            return True
        if axis_only:
            # drop the angular component about the tool axis
            z = T[:3, 2]
            P = np.eye(3) - np.outer(z, z)
            J[3:, :] = P @ J[3:, :]
        score = ep + 0.1 * ang
        if score < best - 1e-9:
            best = score
            stall = 0
        else:
            stall += 1
            if stall > 25:
                return False
        A[:, :] = J @ J.T
        for k in range(6):
            A[k, k] += damping
        dq = J.T @ np.linalg.solve(A, e)
        m = np.max(np.abs(dq))
        if m > max_step:
            dq *= max_step / m
        for k in range(n):
            q[k] = min(max(q[k] + dq[k], lower[k]), upper[k])
    return False


def inverse_reach(
    chain: KinematicChain,
    target: PoseSE3,
    q0=None,
    rng=None,
    damping: float = 1e-3,
    max_iter: int = 200,
    restarts: int = 5,
    max_step: float = 0.3,
    axis_only: bool = False,
) -> Optional[np.ndarray]:
    """Damped-least-squares IK.

    Returns a joint vector reaching ``target`` within 1e-4 m and 1e-3 rad,
    or None when the target is unreachable within the iteration budget.
    With ``axis_only`` only the tool z axis has to match the target's, and
    the roll about it is left free.  The first attempt starts from ``q0``
    (the chain's home if omitted); later restarts draw random
    configurations from ``rng``.
    """
    Tt = np.ascontiguousarray(target.matrix())
    if np.linalg.norm(Tt[:3, 3]) > chain.reach() + POS_TOL:
        return None
    if rng is None:
        rng = np.random.default_rng(0)
    first = chain.home if q0 is None else np.asarray(q0, dtype=float)
    for attempt in range(restarts + 1):
        q = first.copy() if attempt == 0 else chain.random_config(rng)
        q = np.clip(q, chain.lower, chain.upper)
        # converge well inside the tolerance so the round trip holds
        if _dls(chain._fixed_arr, chain._axes, chain._prismatic, chain._tool, chain.lower,
                chain.upper, Tt, q, damping, max_iter, max_step, 0.1 * POS_TOL,
                0.1 * ROT_TOL, axis_only):
            return q
    return None


def chain_from_config(cfg: dict) -> KinematicChain:
    """Build a chain from a declarative mapping.

    ``cfg["joints"]`` is an ordered list of ``{axis, kind, fixed: Pose6
    list, lower?, upper?}``; ``cfg.get("tool")`` is an optional Pose6 list.
    """
    joints = []
    for j in cfg["joints"]:
        joints.append(
            JointSpec(
                axis=np.asarray(j.get("axis", [0, 0, 1]), dtype=float),
                kind=j.get("kind", "revolute"),
                fixed_transform=Pose6.from_array(j.get("fixed", [0] * 6)).to_se3(),
                lower=j.get("lower"),
                upper=j.get("upper"),
            )
        )
    tool = Pose6.from_array(cfg["tool"]).to_se3() if cfg.get("tool") is not None else None
    return KinematicChain(joints, tool=tool, name=cfg.get("name", ""), home=cfg.get("home"))


def planar_arm(lengths: Sequence[float]) -> KinematicChain:
    """Planar revolute-Z arm; link i has length lengths[i] along the moving x axis."""
    z = np.array([0.0, 0.0, 1.0])
    joints = [JointSpec(axis=z)]
    joints += [JointSpec(axis=z, fixed_transform=PoseSE3.translate(a, 0, 0)) for a in lengths[:-1]]
    return KinematicChain(joints, tool=PoseSE3.translate(lengths[-1], 0, 0))
