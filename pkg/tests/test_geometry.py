import numpy as np
import pytest

from touchcal.geometry import (
    EndEffectorCloud,
    EnvironmentModel,
    Primitive,
    SdfGrid,
    TriangleMesh,
    batch_min_distances,
    box_mesh,
    build_sdf,
    environment_from_config,
    hypothesized_distance,
    load_mesh,
    sample_cloud,
)
from touchcal.se3 import Pose6, PoseSE3

RES = 0.005


@pytest.fixture(scope="module")
def unit_box():
    return EnvironmentModel([Primitive("box", (1.0, 1.0, 1.0))])


@pytest.fixture(scope="module")
def box_grid(unit_box):
    return build_sdf(unit_box, RES, padding=0.3)


@pytest.fixture(scope="module")
def table():
    # a 1 m x 1 m slab whose top face is the plane z = 0
    return EnvironmentModel([Primitive("box", (1.0, 1.0, 0.1), Pose6(z=-0.05).to_se3())])


@pytest.fixture(scope="module")
def table_grid(table):
    return build_sdf(table, RES, padding=0.3)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("cone", (1.0,))
    with pytest.raises(ValueError):
        Primitive("box", (1.0, 1.0))
    with pytest.raises(ValueError):
        Primitive("sphere", (-1.0,))


def test_analytic_sdfs():
    s = Primitive("sphere", (0.5,), PoseSE3.translate(1, 0, 0))
    assert s.sdf([1.0, 0, 0]) == pytest.approx(-0.5)
    assert s.sdf([3.0, 0, 0]) == pytest.approx(1.5)
    c = Primitive("cylinder", (0.2, 1.0))
    assert c.sdf([0.5, 0, 0]) == pytest.approx(0.3)
    assert c.sdf([0, 0, 0.7]) == pytest.approx(0.2)
    assert c.sdf([0.3, 0, 0.6]) == pytest.approx(np.hypot(0.1, 0.1))


def test_box_grid_examples(box_grid):
    assert box_grid.query([0.0, 0.0, 0.0]) == pytest.approx(-0.5, abs=1e-6)
    assert box_grid.query([1.0, 0.0, 0.0]) == pytest.approx(0.5, abs=RES)
    assert box_grid.query([0.5, 0.0, 0.0]) == pytest.approx(0.0, abs=RES / 2)
    assert box_grid.query([0.3, 0.0, 0.0]) == pytest.approx(-0.2, abs=RES)


def test_query_at_voxel_center(box_grid):
    idx = np.array([17, 40, 99])
    flat = (idx[0] * box_grid.dims[1] + idx[1]) * box_grid.dims[2] + idx[2]
    assert box_grid.query(box_grid.voxel_centers(idx)) == pytest.approx(float(box_grid.values[flat]))


def test_query_far_outside(box_grid, unit_box):
    p = np.array([10.0, 0.0, 0.0])
    d = box_grid.query(p)
    assert d > 0 and d >= unit_box.sdf(p) - RES


def test_grid_lipschitz(box_grid):
    v = box_grid.volume()
    for axis in range(3):
        assert np.abs(np.diff(v, axis=axis)).max() <= RES * np.sqrt(3) + 1e-6


def test_grid_sign(box_grid, unit_box):
    rng = np.random.default_rng(0)
    idx = rng.integers(0, box_grid.dims, size=(2000, 3))
    centers = box_grid.voxel_centers(idx)
    truth = unit_box.sdf(centers)
    got = box_grid.query(centers)
    strict = np.abs(truth) > 1e-6
    assert np.all(np.sign(got[strict]) == np.sign(truth[strict]))


def test_build_errors(unit_box):
    with pytest.raises(ValueError):
        build_sdf(unit_box, 0.0)
    with pytest.raises(ValueError):
        build_sdf(unit_box, 2.0)


def test_build_independent_of_chunking(unit_box):
    a = build_sdf(unit_box, 0.05, padding=0.1)
    b = build_sdf(unit_box, 0.05, padding=0.1, chunk=500)
    assert np.array_equal(a.values, b.values)


def test_grid_cache_round_trip(tmp_path, box_grid):
    path = tmp_path / "box.sdf"
    box_grid.save(path)
    raw = path.read_bytes()
    assert len(raw) == 4 * 8 + 3 * 8 + 4 * box_grid.values.size
    back = SdfGrid.load(path)
    assert np.array_equal(back.values, box_grid.values)
    assert np.array_equal(back.dims, box_grid.dims)
    np.testing.assert_array_equal(back.origin, box_grid.origin)


def test_trilinear_is_closer(box_grid, unit_box):
    lin = SdfGrid(box_grid.origin, box_grid.resolution, box_grid.dims, box_grid.values, "trilinear")
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.3, 0.3, (2000, 3)) + np.array([0.5, 0, 0])
    e_near = np.abs(box_grid.query(pts) - unit_box.sdf(pts)).mean()
    e_lin = np.abs(lin.query(pts) - unit_box.sdf(pts)).mean()
    assert e_lin < e_near


def test_mesh_sdf_matches_box(unit_box):
    mesh = box_mesh()
    assert mesh.is_watertight()
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.0, 1.0, (500, 3))
    np.testing.assert_allclose(mesh.signed_distance(pts), unit_box.sdf(pts), atol=1e-9)


def test_mesh_normals_point_outward():
    _, normals = box_mesh().face_areas_normals()
    centers = box_mesh().vertices[box_mesh().faces].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", normals, centers) > 0)


def test_non_watertight_rejected():
    mesh = box_mesh()
    with pytest.raises(ValueError):
        EnvironmentModel(mesh=TriangleMesh(mesh.vertices, mesh.faces[:-1]))


def test_load_obj_and_stl(tmp_path):
    mesh = box_mesh((0.4, 0.2, 0.1))
    obj = tmp_path / "b.obj"
    obj.write_text("".join(f"v {x} {y} {z}\n" for x, y, z in mesh.vertices)
                   + "".join(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces))
    stl = tmp_path / "b.stl"
    lines = ["solid b"]
    for f in mesh.faces:
        lines += ["facet normal 0 0 0", "outer loop"]
        lines += [f"vertex {x} {y} {z}" for x, y, z in mesh.vertices[f]]
        lines += ["endloop", "endfacet"]
    stl.write_text("\n".join(lines + ["endsolid b"]))
    pts = np.random.default_rng(3).uniform(-0.5, 0.5, (200, 3))
    for path in (obj, stl):
        m = load_mesh(path)
        assert m.is_watertight()
        np.testing.assert_allclose(m.signed_distance(pts), mesh.signed_distance(pts), atol=1e-9)


def test_environment_from_config_mesh(tmp_path):
    mesh = box_mesh()
    path = tmp_path / "m.obj"
    path.write_text("".join(f"v {x} {y} {z}\n" for x, y, z in mesh.vertices)
                    + "".join(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces))
    env = environment_from_config({"mesh": "m.obj", "segments": {0: list(range(6)), 1: list(range(6, 12))}},
                                  base_dir=tmp_path)
    assert env.segment_ids == [0, 1]
    assert env.segment_area(0) == pytest.approx(3.0)


def test_union_samples_lie_on_boundary():
    env = environment_from_config({"primitives": [
        {"type": "box", "size": [1, 1, 1], "pose": [0, 0, 0, 0, 0, 0], "segment": 0},
        {"type": "box", "size": [1, 1, 1], "pose": [0.5, 0, 0, 0, 0, 0], "segment": 1},
    ]})
    pts, nrm = env.surface_samples(0, 500, np.random.default_rng(4))
    assert np.all(np.abs(env.sdf(pts)) < 1e-9)
    np.testing.assert_allclose(np.linalg.norm(nrm, axis=1), 1.0)


def test_sample_cloud_examples():
    sphere = EnvironmentModel([Primitive("sphere", (0.3,))])
    one = sample_cloud(sphere, 1, 0)
    assert np.linalg.norm(one.points[0]) == pytest.approx(0.3, abs=1e-9)
    cube = EnvironmentModel([Primitive("box", (1.0, 1.0, 1.0))])
    cloud = sample_cloud(cube, 10_000, 1)
    face = np.argmax(np.abs(cloud.points), axis=1) * 2 + (cloud.points[np.arange(10_000),
                                                                        np.argmax(np.abs(cloud.points), axis=1)] > 0)
    counts = np.bincount(face, minlength=6)
    assert np.all(np.abs(counts - 10_000 / 6) <= 0.05 * 10_000 / 6)
    assert np.array_equal(sample_cloud(cube, 50, 9).points, sample_cloud(cube, 50, 9).points)
    with pytest.raises(ValueError):
        sample_cloud(cube, 0, 0)


def test_cloud_points_on_surface():
    probe = environment_from_config({"primitives": [
        {"type": "cylinder", "size": [0.02, 0.08], "pose": [0, 0, 0.04, 0, 0, 0]},
        {"type": "sphere", "size": [0.02], "pose": [0, 0, 0.08, 0, 0, 0]},
    ]})
    cloud = sample_cloud(probe, 300, 5)
    assert np.all(np.abs(probe.sdf(cloud.points)) <= 1e-6)


def test_hypothesized_distance_examples(table_grid):
    cloud = EndEffectorCloud(np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.05], [-0.02, 0.01, 0.03]]))
    ident = PoseSE3.identity()
    above = hypothesized_distance(table_grid, cloud, PoseSE3.translate(0, 0, 0.1), ident)
    assert 0.1 - RES <= above <= 0.1 + RES
    touching = hypothesized_distance(table_grid, cloud, ident, ident)
    assert touching == pytest.approx(0.0, abs=RES)
    sunk = hypothesized_distance(table_grid, cloud, ident, PoseSE3.translate(0, 0, -0.02))
    assert sunk == pytest.approx(-0.02, abs=RES)


def test_hypothesized_distance_subset_monotone(table_grid):
    rng = np.random.default_rng(6)
    pts = rng.uniform(-0.1, 0.1, (50, 3)) + [0, 0, 0.1]
    full = EndEffectorCloud(pts)
    part = EndEffectorCloud(pts[:20])
    T = Pose6(0.1, 0.0, 0.0, 0.1, 0.0, 0.2).to_se3()
    assert hypothesized_distance(table_grid, part, T, PoseSE3.identity()) >= \
        hypothesized_distance(table_grid, full, T, PoseSE3.identity())


def test_rigid_motion_invariance():
    prim = Primitive("box", (0.6, 0.4, 0.2))
    shift = Pose6(0.3, -0.2, 0.1, 0.0, 0.0, 0.0).to_se3()
    moved = Primitive("box", (0.6, 0.4, 0.2), shift)
    g0 = build_sdf(EnvironmentModel([prim]), RES, 0.2)
    g1 = build_sdf(EnvironmentModel([moved]), RES, 0.2)
    cloud = EndEffectorCloud(np.random.default_rng(7).uniform(-0.02, 0.02, (30, 3)))
    X = Pose6(0.1, 0.05, 0.15, 0, 0, 0).to_se3()
    d0 = hypothesized_distance(g0, cloud, X, PoseSE3.identity())
    d1 = hypothesized_distance(g1, cloud, shift @ X, PoseSE3.identity())
    assert d1 == pytest.approx(d0, abs=RES)


def test_batch_matches_scalar(table_grid):
    rng = np.random.default_rng(8)
    cloud = EndEffectorCloud(rng.uniform(-0.03, 0.03, (25, 3)))
    poses = np.column_stack([rng.uniform(-0.2, 0.2, (6, 3)), rng.uniform(-0.2, 0.2, (6, 3))])
    ee = np.stack([Pose6(0, 0, z, 0, 0, 0).to_se3().matrix() for z in (0.0, 0.05, 0.2)])
    out = batch_min_distances(table_grid, cloud, poses, ee)
    for m in range(6):
        for j in range(3):
            ref = hypothesized_distance(table_grid, cloud, Pose6.from_array(poses[m]).to_se3(),
                                        PoseSE3.from_matrix(ee[j]))
            assert out[m, j] == pytest.approx(ref, abs=1e-9)
