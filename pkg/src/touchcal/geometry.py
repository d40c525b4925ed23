"""Environment models, voxelized signed distance fields and end-effector clouds."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .se3 import Pose6, PoseSE3

INSIDE_TOL = 1e-9
HEADER = struct.Struct("<4d3q")


# --------------------------------------------------------------------------- #
# primitives


@dataclass(frozen=True)
class Primitive:
    """Convex solid: ``box`` (size = full extents), ``sphere`` (size =
    [radius]) or ``cylinder`` (size = [radius, height], axis along local z)."""

    kind: str
    size: tuple
    pose: PoseSE3 = field(default_factory=PoseSE3.identity)
    segment: int = 0

    def __post_init__(self):
        size = tuple(float(s) for s in np.atleast_1d(self.size))
        need = {"box": 3, "sphere": 1, "cylinder": 2}
        if self.kind not in need:
            raise ValueError(f"unknown primitive {self.kind!r}")
        if len(size) != need[self.kind] or min(size) <= 0:
            raise ValueError(f"bad size {size} for {self.kind}")
        object.__setattr__(self, "size", size)

    def local_sdf(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - self.size[0]
        if self.kind == "box":
            q = np.abs(p) - 0.5 * np.asarray(self.size)
        else:
            r, h = self.size
            q = np.stack([np.hypot(p[..., 0], p[..., 1]) - r, np.abs(p[..., 2]) - 0.5 * h], axis=-1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def sdf(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        local = (p - self.pose.translation) @ self.pose.rotation
        return self.local_sdf(local)

    def area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * np.pi * self.size[0] ** 2
        if self.kind == "box":
            a, b, c = self.size
            return 2.0 * (a * b + b * c + a * c)
        r, h = self.size
        return 2.0 * np.pi * r * h + 2.0 * np.pi * r * r

    def min_extent(self) -> float:
        if self.kind == "sphere":
            return 2.0 * self.size[0]
        if self.kind == "box":
            return min(self.size)
        return min(2.0 * self.size[0], self.size[1])

    def corners(self) -> np.ndarray:
        if self.kind == "sphere":
            h = np.full(3, self.size[0])
        elif self.kind == "box":
            h = 0.5 * np.asarray(self.size)
        else:
            h = np.array([self.size[0], self.size[0], 0.5 * self.size[1]])
        signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij")).reshape(3, -1).T
        return self.pose.apply(signs * h)

    def sample_local(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Area-uniform surface points and outward normals in the local frame."""
        if self.kind == "sphere":
            nrm = rng.standard_normal((n, 3))
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            return nrm * self.size[0], nrm
        if self.kind == "box":
            h = 0.5 * np.asarray(self.size)
            face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]]).repeat(2)
            face = rng.choice(6, size=n, p=face_area / face_area.sum())
            axis = face // 2
            sign = np.where(face % 2 == 0, 1.0, -1.0)
            pts = rng.uniform(-h, h, size=(n, 3))
            pts[np.arange(n), axis] = sign * h[axis]
            nrm = np.zeros((n, 3))
            nrm[np.arange(n), axis] = sign
            return pts, nrm
        r, height = self.size
        hz = 0.5 * height
        parts = np.array([2.0 * np.pi * r * height, np.pi * r * r, np.pi * r * r])
        part = rng.choice(3, size=n, p=parts / parts.sum())
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        side = part == 0
        pts[side, 0] = r * np.cos(theta[side])
        pts[side, 1] = r * np.sin(theta[side])
        pts[side, 2] = rng.uniform(-hz, hz, side.sum())
        nrm[side, 0] = np.cos(theta[side])
        nrm[side, 1] = np.sin(theta[side])
        cap = ~side
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, cap.sum()))
        pts[cap, 0] = rad * np.cos(theta[cap])
        pts[cap, 1] = rad * np.sin(theta[cap])
        sgn = np.where(part[cap] == 1, 1.0, -1.0)
        pts[cap, 2] = sgn * hz
        nrm[cap, 2] = sgn
        return pts, nrm

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        pts, nrm = self.sample_local(n, rng)
        return self.pose.apply(pts), nrm @ self.pose.rotation.T


# --------------------------------------------------------------------------- #
# triangle meshes


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "faces", np.ascontiguousarray(self.faces, dtype=np.int64))

    def is_watertight(self) -> bool:
        f = self.faces
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def face_areas_normals(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices[self.faces]
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        n2 = np.linalg.norm(cr, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            normals = cr / n2[:, None]
        return 0.5 * n2, normals

    def signed_distance(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        out = np.empty(len(pts))
        _kernels.mesh_signed_distance(pts, self.vertices, self.faces, out)
        return out.reshape(np.shape(points)[:-1])

    def sample(self, n: int, rng, face_subset=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        areas, normals = self.face_areas_normals()
        idx = np.arange(len(self.faces)) if face_subset is None else np.asarray(face_subset)
        a = areas[idx]
        chosen = idx[rng.choice(len(idx), size=n, p=a / a.sum())]
        u, v = rng.uniform(size=(2, n))
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        tri = self.vertices[self.faces[chosen]]
        pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
        return pts, normals[chosen], chosen


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or STL (ASCII or binary) file; duplicate STL vertices are merged."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        verts, faces = [], []
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        return TriangleMesh(np.array(verts), np.array(faces))
    if path.suffix.lower() == ".stl":
        data = path.read_bytes()
        if data[:5] == b"solid" and b"facet" in data[:1024]:
            nums = [line.split()[1:] for line in data.decode().splitlines() if line.strip().startswith("vertex")]
            tris = np.array(nums, dtype=float).reshape(-1, 3, 3)
        else:
            count = struct.unpack("<I", data[80:84])[0]
            rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            tris = np.frombuffer(data, dtype=rec, count=count, offset=84)["v"].astype(float)
        verts, inv = np.unique(tris.reshape(-1, 3), axis=0, return_inverse=True)
        return TriangleMesh(verts, inv.reshape(-1, 3))
    raise ValueError(f"unsupported mesh format: {path.suffix}")


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    h = 0.5 * np.asarray(size, dtype=float)
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float) * h + center
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # -x, +x
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # -y, +y
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # -z, +z
    ])
    return TriangleMesh(v, f)


# --------------------------------------------------------------------------- #
# environment


@dataclass
class EnvironmentModel:
    """A union of convex primitives or a closed triangle mesh, in world frame.

    For meshes ``mesh_segments`` maps segment id to a list of face indices;
    primitives carry their own segment id.
    """

    solids: list = field(default_factory=list)
    mesh: Optional[TriangleMesh] = None
    mesh_segments: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.solids and self.mesh is None:
            raise ValueError("environment needs at least one solid")
        if self.mesh is not None:
            if not self.mesh.is_watertight():
                raise ValueError("mesh is not watertight")
            if not self.mesh_segments:
                self.mesh_segments = {0: list(range(len(self.mesh.faces)))}

    @property
    def segment_ids(self) -> list[int]:
        if self.mesh is not None:
            return sorted(self.mesh_segments)
        return sorted({s.segment for s in self.solids})

    def sdf(self, points) -> np.ndarray:
        """Exact signed distance (min over solids for primitive unions)."""
        points = np.asarray(points, dtype=float)
        if self.mesh is not None:
            return self.mesh.signed_distance(points)
        out = self.solids[0].sdf(points)
        for s in self.solids[1:]:
            out = np.minimum(out, s.sdf(points))
        return out

    def query(self, points) -> np.ndarray:
        return self.sdf(points)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mesh is not None:
            v = self.mesh.vertices
        else:
            v = np.concatenate([s.corners() for s in self.solids])
        return v.min(axis=0), v.max(axis=0)

    def min_extent(self) -> float:
        if self.mesh is not None:
            lo, hi = self.aabb()
            return float(np.min(hi - lo))
        return min(s.min_extent() for s in self.solids)

    def segment_area(self, seg: int) -> float:
        if self.mesh is not None:
            areas, _ = self.mesh.face_areas_normals()
            return float(areas[self.mesh_segments[seg]].sum())
        return float(sum(s.area() for s in self.solids if s.segment == seg))

    def sample_segment(self, seg, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Raw area-weighted samples on a segment (all of them for ``seg=None``),
        before any union rejection."""
        if self.mesh is not None:
            faces = None if seg is None else self.mesh_segments[seg]
            pts, nrm, _ = self.mesh.sample(n, rng, faces)
            return pts, nrm
        solids = [s for s in self.solids if seg is None or s.segment == seg]
        areas = np.array([s.area() for s in solids])
        which = rng.choice(len(solids), size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        for k, s in enumerate(solids):
            sel = which == k
            if sel.any():
                pts[sel], nrm[sel] = s.sample(int(sel.sum()), rng)
        return pts, nrm

    def surface_samples(self, seg: int, n: int, rng, keep=None, max_rounds: int = 200):
        """Exactly ``n`` surface points of a segment lying on the union boundary.

        Points buried inside another solid are discarded; ``keep`` is an
        optional extra (points, normals) -> mask filter.
        """
        got_p, got_n, total = [], [], 0
        for _ in range(max_rounds):
            batch = max(2 * (n - total), 64)
            pts, nrm = self.sample_segment(seg, batch, rng)
            mask = np.ones(batch, dtype=bool)
            if self.mesh is None and len(self.solids) > 1:
                mask &= self.sdf(pts) > -INSIDE_TOL
            if keep is not None:
                mask &= keep(pts, nrm)
            got_p.append(pts[mask])
            got_n.append(nrm[mask])
            total += int(mask.sum())
            if total >= n:
                return np.concatenate(got_p)[:n], np.concatenate(got_n)[:n]
        raise ValueError(f"segment {seg} has no samplable area")


def environment_from_config(cfg: dict, base_dir=None) -> EnvironmentModel:
    """Declarative environment: ``{primitives: [{type, size, pose, segment}]}``
    or ``{mesh: path, segments: {id: [face indices]}}``."""
    if cfg.get("mesh"):
        path = Path(cfg["mesh"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        segs = {int(k): list(v) for k, v in (cfg.get("segments") or {}).items()}
        return EnvironmentModel(mesh=load_mesh(path), mesh_segments=segs)
    solids = []
    for i, p in enumerate(cfg["primitives"]):
        solids.append(
            Primitive(
                kind=p["type"],
                size=tuple(np.atleast_1d(p["size"])),
                pose=Pose6.from_array(p.get("pose", [0] * 6)).to_se3(),
                segment=int(p.get("segment", i)),
            )
        )
    return EnvironmentModel(solids=solids)


# --------------------------------------------------------------------------- #
# signed distance grid


class SdfGrid:
    """Dense SDF sampled at voxel centers ``origin + index * resolution``."""

    def __init__(self, origin, resolution: float, dims, values, interpolation: str = "nearest"):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.resolution = float(resolution)
        self.dims = np.asarray(dims, dtype=np.int64).reshape(3)
        values = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
        if values.size != int(np.prod(self.dims)):
            raise ValueError("value count does not match dims")
        values.flags.writeable = False
        self.values = values
        self.interpolation = interpolation

    @property
    def mode(self) -> int:
        return _kernels.TRILINEAR if self.interpolation == "trilinear" else _kernels.NEAREST

    def volume(self) -> np.ndarray:
        return self.values.reshape(tuple(self.dims))

    def voxel_centers(self, idx) -> np.ndarray:
        return self.origin + np.asarray(idx, dtype=float) * self.resolution

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * self.resolution
        return self.origin - half, self.origin + (self.dims - 0.5) * self.resolution

    def query(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = np.ascontiguousarray(pts.reshape(-1, 3))
        out = np.empty(len(flat))
        _kernels.query_points(self.values, self.origin, self.resolution, self.dims, flat, self.mode, out)
        return out.reshape(pts.shape[:-1]) if pts.ndim > 1 else out[0]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(*self.origin, self.resolution, *(int(d) for d in self.dims)))
            fh.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "SdfGrid":
        data = Path(path).read_bytes()
        head = HEADER.unpack_from(data)
        origin, res, dims = head[:3], head[3], head[4:]
        values = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
        return cls(origin, res, dims, values.astype(np.float32))


def build_sdf(env: EnvironmentModel, resolution: float, padding: float = 0.3,
              interpolation: str = "nearest", chunk: int = 2_000_000) -> SdfGrid:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if resolution > env.min_extent():
        raise ValueError("resolution is coarser than the smallest solid")
    lo, hi = env.aabb()
    lo = lo - padding
    hi = hi + padding
    dims = np.ceil((hi - lo) / resolution).astype(np.int64) + 1
    origin = lo
    nx, ny, nz = (int(d) for d in dims)
    values = np.empty(nx * ny * nz, dtype=np.float32)
    ys = origin[1] + np.arange(ny) * resolution
    zs = origin[2] + np.arange(nz) * resolution
    yz = np.stack(np.meshgrid(ys, zs, indexing="ij"), axis=-1).reshape(-1, 2)
    per = max(1, chunk // len(yz))
    # x-slabs in row-major order; identical regardless of chunk size
    for x0 in range(0, nx, per):
        xs = origin[0] + np.arange(x0, min(nx, x0 + per)) * resolution
        pts = np.empty((len(xs), len(yz), 3))
        pts[..., 0] = xs[:, None]
        pts[..., 1:] = yz[None, :, :]
        values[x0 * ny * nz:(x0 + len(xs)) * ny * nz] = env.sdf(pts.reshape(-1, 3))
    return SdfGrid(origin, resolution, dims, values, interpolation)


# --------------------------------------------------------------------------- #
# end-effector cloud


@dataclass(frozen=True)
class EndEffectorCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float).reshape(-1, 3))
        if len(pts) < 1:
            raise ValueError("cloud needs at least one point")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def sample_cloud(ee_model: EnvironmentModel, count: int, seed) -> EndEffectorCloud:
    """Area-weighted uniform points on the outer surface of the end-effector."""
    if count < 1:
        raise ValueError("cloud size must be at least 1")
    rng = np.random.default_rng(seed)
    pts, _ = ee_model.surface_samples(None, count, rng)
    return EndEffectorCloud(pts)


def hypothesized_distance(grid, cloud: EndEffectorCloud, base_pose: PoseSE3, ee_transform: PoseSE3) -> float:
    """Smallest SDF value over the cloud placed at ``base_pose * ee_transform``."""
    world = (base_pose @ ee_transform).apply(cloud.points)
    return float(np.min(grid.query(world)))


def batch_min_distances(grid: SdfGrid, cloud: EndEffectorCloud, poses, ee_mats) -> np.ndarray:
    """(M, J) hypothesized distances for pose vectors and 4x4 end-effector transforms."""
    poses = np.ascontiguousarray(np.atleast_2d(poses), dtype=float)
    ee = np.ascontiguousarray(np.asarray(ee_mats, dtype=float).reshape(-1, 4, 4))
    out = np.empty((len(poses), len(ee)))
    _kernels.min_distances(poses, ee, cloud.points, grid.values, grid.origin, grid.resolution,
                           grid.dims, grid.mode, 0, len(poses), out)
    return out
