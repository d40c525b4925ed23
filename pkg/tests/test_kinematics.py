import numpy as np
import pytest

from touchcal.config import load_yaml
from touchcal.kinematics import (
    JointSpec,
    KinematicChain,
    axis_error,
    chain_from_config,
    forward,
    inverse_reach,
    planar_arm,
    pose_error,
)
from touchcal.se3 import Pose6, PoseSE3


@pytest.fixture(scope="module")
def arm():
    return planar_arm([0.5, 0.3])


@pytest.fixture(scope="module")
def franka():
    return chain_from_config(load_yaml("franka"))


def test_single_joint_zero_config():
    fixed = Pose6(0.1, 0.2, 0.3, 0.0, 0.4, 0.0).to_se3()
    chain = KinematicChain([JointSpec(axis=[0, 0, 1], fixed_transform=fixed)])
    assert forward(chain, [0.0]).isclose(fixed)


def test_planar_arm_examples(arm):
    np.testing.assert_allclose(forward(arm, [0, 0]).translation, [0.8, 0, 0], atol=1e-12)
    np.testing.assert_allclose(forward(arm, [np.pi / 2, 0]).translation, [0, 0.8, 0], atol=1e-12)


def test_dimension_mismatch(arm):
    with pytest.raises(ValueError):
        forward(arm, [0.0])


def test_bad_axis_and_kind():
    with pytest.raises(ValueError):
        JointSpec(axis=[0, 0, 2])
    with pytest.raises(ValueError):
        JointSpec(axis=[0, 0, 1], kind="spherical")
    with pytest.raises(ValueError):
        KinematicChain([])


def test_prismatic_joint():
    chain = KinematicChain([JointSpec(axis=[1, 0, 0], kind="prismatic", lower=0.0, upper=0.5)])
    np.testing.assert_allclose(forward(chain, [0.25]).translation, [0.25, 0, 0])
    assert chain.reach() == pytest.approx(0.5)


def test_jacobian_matches_finite_differences(arm):
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, 2)
        _, J = arm.forward_and_jacobian(q)
        num = np.empty((3, 2))
        for i in range(2):
            dq = np.zeros(2)
            dq[i] = 1e-6
            num[:, i] = (forward(arm, q + dq).translation - forward(arm, q - dq).translation) / 2e-6
        np.testing.assert_allclose(J[:3], num, rtol=1e-5, atol=1e-8)


def test_ik_round_trip_planar(arm):
    target = forward(arm, [0.4, -0.9])
    q = inverse_reach(arm, target, rng=np.random.default_rng(0))
    assert q is not None
    _, dp, dr = pose_error(arm.forward_matrix(q), target.matrix())
    assert dp <= 1e-4 and dr <= 1e-3


def test_ik_out_of_reach(arm):
    assert inverse_reach(arm, PoseSE3.translate(0.81, 0, 0)) is None


def test_ik_identity_target():
    z = [0.0, 0.0, 1.0]
    chain = KinematicChain([JointSpec(axis=z), JointSpec(axis=[1.0, 0, 0])])
    q = inverse_reach(chain, PoseSE3.identity(), q0=[0.2, -0.1])
    np.testing.assert_allclose(q, 0.0, atol=1e-3)


def test_ik_round_trip_franka(franka):
    rng = np.random.default_rng(5)
    ok = 0
    for _ in range(10):
        q0 = franka.random_config(rng)
        target = forward(franka, q0)
        q = inverse_reach(franka, target, rng=rng)
        if q is None:
            continue
        ok += 1
        _, dp, dr = pose_error(franka.forward_matrix(q), target.matrix())
        assert dp <= 1e-4 and dr <= 1e-3
        assert np.all(q >= franka.lower - 1e-12) and np.all(q <= franka.upper + 1e-12)
    assert ok >= 8


def test_ik_axis_only(franka):
    target = forward(franka, franka.home)
    spun = PoseSE3(target.rotation @ np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]]), target.translation)
    q = inverse_reach(franka, spun, axis_only=True)
    assert q is not None
    T = franka.forward_matrix(q)
    assert np.linalg.norm(T[:3, 3] - spun.translation) <= 1e-4
    assert axis_error(T, spun.matrix()) <= 1e-3


def test_franka_fixture(franka):
    assert franka.dof == 7
    assert 1.0 < franka.reach() < 1.5
