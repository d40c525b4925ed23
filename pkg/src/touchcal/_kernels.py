"""Compiled inner loops: SDF lookup and per-particle contact likelihoods.

Every kernel is ``nogil`` and writes one output slot per particle, so
splitting the particle range across threads cannot change any result.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NEAREST = 0
TRILINEAR = 1


@njit(cache=True, nogil=True, inline="always")
def _nearest(values, origin, res, nx, ny, nz, px, py, pz):
    fx = (px - origin[0]) / res
    fy = (py - origin[1]) / res
    fz = (pz - origin[2]) / res
    ix = int(math.floor(fx + 0.5))
    iy = int(math.floor(fy + 0.5))
    iz = int(math.floor(fz + 0.5))
    if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
        return values[(ix * ny + iy) * nz + iz]
    # outside: clamp to the boundary voxel and add the distance to the grid box
    half = 0.5 * res
    dx = max(origin[0] - half - px, 0.0, px - (origin[0] + (nx - 0.5) * res))
    dy = max(origin[1] - half - py, 0.0, py - (origin[1] + (ny - 0.5) * res))
    dz = max(origin[2] - half - pz, 0.0, pz - (origin[2] + (nz - 0.5) * res))
    ix = min(max(ix, 0), nx - 1)
    iy = min(max(iy, 0), ny - 1)
    iz = min(max(iz, 0), nz - 1)
    return values[(ix * ny + iy) * nz + iz] + math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True, nogil=True, inline="always")
def _trilinear(values, origin, res, nx, ny, nz, px, py, pz):
    fx = (px - origin[0]) / res
    fy = (py - origin[1]) / res
    fz = (pz - origin[2]) / res
    if not (0.0 <= fx <= nx - 1 and 0.0 <= fy <= ny - 1 and 0.0 <= fz <= nz - 1):
        return _nearest(values, origin, res, nx, ny, nz, px, py, pz)
    ix = min(int(fx), nx - 2) if nx > 1 else 0
    iy = min(int(fy), ny - 2) if ny > 1 else 0
    iz = min(int(fz), nz - 2) if nz > 1 else 0
    tx = fx - ix
    ty = fy - iy
    tz = fz - iz
    acc = 0.0
    for a in range(2):
        wx = tx if a else 1.0 - tx
        jx = min(ix + a, nx - 1)
        for b in range(2):
            wy = ty if b else 1.0 - ty
            jy = min(iy + b, ny - 1)
            for c in range(2):
                wz = tz if c else 1.0 - tz
                jz = min(iz + c, nz - 1)
                acc += wx * wy * wz * values[(jx * ny + jy) * nz + jz]
    return acc


@njit(cache=True, nogil=True, inline="always")
def _lookup(values, origin, res, nx, ny, nz, px, py, pz, mode):
    if mode == TRILINEAR:
        return _trilinear(values, origin, res, nx, ny, nz, px, py, pz)
    return _nearest(values, origin, res, nx, ny, nz, px, py, pz)


@njit(cache=True, nogil=True)
def query_points(values, origin, res, dims, points, mode, out):
    nx, ny, nz = dims[0], dims[1], dims[2]
    for i in range(points.shape[0]):
        out[i] = _lookup(values, origin, res, nx, ny, nz,
                         points[i, 0], points[i, 1], points[i, 2], mode)


@njit(cache=True, nogil=True, inline="always")
def _pose_matrix(p, R):
    cr, sr = math.cos(p[3]), math.sin(p[3])
    cp, sp = math.cos(p[4]), math.sin(p[4])
    cy, sy = math.cos(p[5]), math.sin(p[5])
    R[0, 0] = cp * cy
    R[0, 1] = -cp * sy
    R[0, 2] = sp
    R[1, 0] = cr * sy + sr * sp * cy
    R[1, 1] = cr * cy - sr * sp * sy
    R[1, 2] = -sr * cp
    R[2, 0] = sr * sy - cr * sp * cy
    R[2, 1] = sr * cy + cr * sp * sy
    R[2, 2] = cr * cp


@njit(cache=True, nogil=True, inline="always")
def _chain(R, t, E, W):
    # W = [R t] @ E for a 4x4 end-effector transform E (top 3 rows)
    for r in range(3):
        for c in range(4):
            acc = R[r, 0] * E[0, c] + R[r, 1] * E[1, c] + R[r, 2] * E[2, c]
            if c == 3:
                acc += t[r]
            W[r, c] = acc


@njit(cache=True, nogil=True)
def min_distances(poses, ee, cloud, values, origin, res, dims, mode, start, stop, out):
    """out[m, j] = min over cloud points of SDF(pose_m * ee_j * p)."""
    nx, ny, nz = dims[0], dims[1], dims[2]
    R = np.empty((3, 3))
    W = np.empty((3, 4))
    for m in range(start, stop):
        _pose_matrix(poses[m], R)
        t = poses[m, :3]
        for j in range(ee.shape[0]):
            _chain(R, t, ee[j], W)
            best = np.inf
            for l in range(cloud.shape[0]):
                x, y, z = cloud[l, 0], cloud[l, 1], cloud[l, 2]
                px = W[0, 0] * x + W[0, 1] * y + W[0, 2] * z + W[0, 3]
                py = W[1, 0] * x + W[1, 1] * y + W[1, 2] * z + W[1, 3]
                pz = W[2, 0] * x + W[2, 1] * y + W[2, 2] * z + W[2, 3]
                d = _lookup(values, origin, res, nx, ny, nz, px, py, pz, mode)
                if d < best:
                    best = d
            out[m, j] = best


@njit(cache=True, nogil=True)
def log_weights(poses, ee, contact, cloud, values, origin, res, dims, mode,
                sigma_p, delta_p, log_eps, literal, start, stop, out):
    """Per-particle log of the product of per-event contact likelihoods.

    Contact events score a Gaussian density in the hypothesized distance;
    no-contact events score ``log_eps`` when the end-effector would sit
    deeper than ``delta_p`` inside the environment, and 0 otherwise.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    R = np.empty((3, 3))
    W = np.empty((3, 4))
    log_norm = -0.5 * math.log(2.0 * math.pi * sigma_p * sigma_p)
    denom = 2.0 * sigma_p if literal else 2.0 * sigma_p * sigma_p
    for m in range(start, stop):
        _pose_matrix(poses[m], R)
        t = poses[m, :3]
        acc = 0.0
        for j in range(ee.shape[0]):
            _chain(R, t, ee[j], W)
            hit = contact[j] != 0
            best = np.inf
            for l in range(cloud.shape[0]):
                x, y, z = cloud[l, 0], cloud[l, 1], cloud[l, 2]
                px = W[0, 0] * x + W[0, 1] * y + W[0, 2] * z + W[0, 3]
                py = W[1, 0] * x + W[1, 1] * y + W[1, 2] * z + W[1, 3]
                pz = W[2, 0] * x + W[2, 1] * y + W[2, 2] * z + W[2, 3]
                d = _lookup(values, origin, res, nx, ny, nz, px, py, pz, mode)
                if d < best:
                    best = d
                    # a single penetrating point already decides a no-contact event
                    if not hit and best < -delta_p:
                        break
            if hit:
                acc += log_norm - best * best / denom
            elif best < -delta_p:
                acc += log_eps
        out[m] = acc


@njit(cache=True, nogil=True)
def _closest_on_triangle(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        return a + ab * (d1 / (d1 - d3))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True, nogil=True)
def mesh_signed_distance(points, verts, faces, out):
    """Exact unsigned point-to-mesh distance, signed by the winding number."""
    for i in range(points.shape[0]):
        p = points[i]
        best = np.inf
        wind = 0.0
        for f in range(faces.shape[0]):
            a = verts[faces[f, 0]]
            b = verts[faces[f, 1]]
            c = verts[faces[f, 2]]
            q = _closest_on_triangle(p, a, b, c)
            d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
            if d < best:
                best = d
            # solid angle of the triangle seen from p (Van Oosterom & Strackee)
            ra = a - p
            rb = b - p
            rc = c - p
            la = math.sqrt(ra @ ra)
            lb = math.sqrt(rb @ rb)
            lc = math.sqrt(rc @ rc)
            num = (ra[0] * (rb[1] * rc[2] - rb[2] * rc[1])
                   - ra[1] * (rb[0] * rc[2] - rb[2] * rc[0])
                   + ra[2] * (rb[0] * rc[1] - rb[1] * rc[0]))
            den = la * lb * lc + (ra @ rb) * lc + (rb @ rc) * la + (rc @ ra) * lb
            wind += 2.0 * math.atan2(num, den)
        wind /= 4.0 * math.pi
        out[i] = -best if wind > 0.5 else best
