"""Rigid-body poses: 6-vector and matrix views, weighted statistics, noise.

Euler angles use the intrinsic X-Y-Z convention, so that
``R = Rx(roll) @ Ry(pitch) @ Rz(yaw)``.  Angles in a 6-vector are always
wrapped to (-pi, pi].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ANGLES = slice(3, 6)
ORTHO_TOL = 1e-9


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(rpy) -> np.ndarray:
    """Rotation matrices for (..., 3) roll/pitch/yaw arrays."""
    rpy = np.asarray(rpy, dtype=float)
    r, p, y = rpy[..., 0], rpy[..., 1], rpy[..., 2]
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    R = np.empty(rpy.shape[:-1] + (3, 3))
    R[..., 0, 0] = cp * cy
    R[..., 0, 1] = -cp * sy
    R[..., 0, 2] = sp
    R[..., 1, 0] = cr * sy + sr * sp * cy
    R[..., 1, 1] = cr * cy - sr * sp * sy
    R[..., 1, 2] = -sr * cp
    R[..., 2, 0] = sr * sy - cr * sp * cy
    R[..., 2, 1] = sr * cy + cr * sp * sy
    R[..., 2, 2] = cr * cp
    return R


def matrix_to_euler(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    pitch = np.arctan2(R[..., 0, 2], np.hypot(R[..., 0, 0], R[..., 0, 1]))
    yaw = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    roll = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    return wrap_angle(np.stack([roll, pitch, yaw], axis=-1))


@dataclass(frozen=True)
class PoseSE3:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=ORTHO_TOL, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def translate(cls, x: float, y: float, z: float) -> "PoseSE3":
        return cls(np.eye(3), [x, y, z])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Map (..., 3) points from this frame into the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return compose(self, other)

    def isclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )


@dataclass(frozen=True)
class Pose6:
    """Pose as [x, y, z, roll, pitch, yaw]; angles wrapped on construction."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "Pose6":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(*v)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    def to_list(self) -> list[float]:
        return [float(v) for v in self.to_array()]

    def to_se3(self) -> PoseSE3:
        v = self.to_array()
        return PoseSE3(euler_to_matrix(v[3:]), v[:3])

    @classmethod
    def from_se3(cls, pose: PoseSE3) -> "Pose6":
        return cls.from_array(np.concatenate([pose.translation, matrix_to_euler(pose.rotation)]))


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    return PoseSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: PoseSE3) -> PoseSE3:
    Rt = p.rotation.T
    return PoseSE3(Rt, -Rt @ p.translation)


def pose6_to_matrices(poses) -> np.ndarray:
    """(M, 6) pose vectors to (M, 4, 4) homogeneous transforms."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    T = np.zeros(poses.shape[:-1] + (4, 4))
    T[..., :3, :3] = euler_to_matrix(poses[..., 3:])
    T[..., :3, 3] = poses[..., :3]
    T[..., 3, 3] = 1.0
    return T


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_log(R) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    angle = rotation_angle(R)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * angle
    return w * (angle / (2.0 * np.sin(angle)))


def perturb_array(poses, sigma, rng) -> np.ndarray:
    """Add N(0, sigma^2) noise to (M, 6) pose vectors, re-wrapping angles.

    ``sigma`` is a scalar or a 6-vector of per-dimension scales.  ``rng`` is
    anything with a numpy-style ``standard_normal(size)``.
    """
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (6,))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    poses = np.asarray(poses, dtype=float)
    out = poses + rng.standard_normal(poses.shape) * sigma
    out[..., ANGLES] = wrap_angle(out[..., ANGLES])
    return out


def perturb(p: Pose6, sigma, rng) -> Pose6:
    return Pose6.from_array(perturb_array(p.to_array()[None, :], sigma, rng)[0])


def _check_weights(w: np.ndarray) -> None:
    if w.size == 0:
        raise ValueError("empty particle set")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")


def weighted_mean_array(poses, weights) -> np.ndarray:
    """Weighted mean of (M, 6) pose vectors; circular mean for angles."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    w = np.asarray(weights, dtype=float).reshape(-1)
    _check_weights(w)
    out = np.empty(6)
    out[:3] = w @ poses[:, :3]
    s = w @ np.sin(poses[:, ANGLES])
    c = w @ np.cos(poses[:, ANGLES])
    out[3:] = wrap_angle(np.arctan2(s, c))
    return out


def dimwise_variance_array(poses, weights, mean=None) -> np.ndarray:
    """Per-dimension weighted variance.

    Angular dimensions use the weighted mean square of wrapped deviations
    from the circular mean, so every entry is in m^2 or rad^2.
    """
    poses = np.asarray(poses, dtype=float).reshape(-1, 6)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if mean is None:
        mean = weighted_mean_array(poses, w)
    else:
        _check_weights(w)
    dev = poses - mean
    dev[:, ANGLES] = wrap_angle(dev[:, ANGLES])
    return w @ (dev * dev)


def _unzip(particles) -> tuple[np.ndarray, np.ndarray]:
    particles = list(particles)
    if not particles:
        raise ValueError("empty particle set")
    poses = np.array([p.to_array() for p, _ in particles])
    w = np.array([float(wi) for _, wi in particles])
    return poses, w


def weighted_mean(particles) -> Pose6:
    """Weighted mean of a list of (Pose6, weight) pairs."""
    poses, w = _unzip(particles)
    return Pose6.from_array(weighted_mean_array(poses, w))


def dimwise_variance(particles) -> np.ndarray:
    poses, w = _unzip(particles)
    return dimwise_variance_array(poses, w)
