import numpy as np
import pytest

from conftest import central_difference
from estimation.dq_algebra import IDENTITY_POSE, is_unit_pose, pose_to_parts, rot_from_axis_angle
from estimation.exceptions import InvariantError
from estimation.rigid_body import (
    RigidBodyParams,
    RigidBodyState,
    dynamics_deriv,
    integrate_step,
    kinematics_deriv,
    propagate_pose,
    screw_motion,
)


@pytest.fixture
def params():
    return RigidBodyParams(mass=10.0, inertia=np.diag([2.0, 3.0, 4.0]))


def test_kinematics_at_rest(random_pose):
    assert np.allclose(kinematics_deriv(random_pose, np.zeros(6)), 0.0)


def test_kinematics_spin_about_z():
    d = kinematics_deriv(IDENTITY_POSE, np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(d[:4], [0.0, 0.0, 0.0, 0.5])
    assert np.allclose(d[4:], 0.0)


def test_kinematics_matches_screw_motion(rng, random_pose):
    w = rng.standard_normal(6)
    numeric = central_difference(lambda t: screw_motion(random_pose, w, t[0]), np.zeros(1))[:, 0]
    assert np.allclose(kinematics_deriv(random_pose, w), numeric, atol=1e-7)


def test_dynamics_principal_axis(params):
    accel = dynamics_deriv(np.array([0.0, 0.3, 0.0, 0.0, 0.0, 0.0]), params, np.zeros(6))
    assert np.allclose(accel, 0.0)


def test_dynamics_unit_inertia(rng):
    params = RigidBodyParams(mass=1.0, inertia=np.eye(3))
    accel = dynamics_deriv(np.concatenate((rng.standard_normal(3), np.zeros(3))), params, np.zeros(6))
    assert np.allclose(accel[:3], 0.0)


def test_dynamics_matches_euler_and_newton(rng, params):
    w, f = rng.standard_normal(6), rng.standard_normal(6)
    omega, v = w[:3], w[3:]
    J, m = params.inertia, params.mass
    omega_dot = np.linalg.solve(J, f[:3] - np.cross(omega, J @ omega))
    v_dot = f[3:] / m - np.cross(omega, v)
    assert np.allclose(dynamics_deriv(w, params, f), np.concatenate((omega_dot, v_dot)))


def test_asymmetric_inertia_rejected():
    with pytest.raises(InvariantError):
        RigidBodyParams(mass=1.0, inertia=np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_integrate_at_rest(params, random_pose):
    state = integrate_step(RigidBodyState(random_pose, np.zeros(6)), params, np.zeros(6), 0.05)
    assert np.allclose(state.pose, random_pose)
    assert np.allclose(state.velocity, 0.0)


def test_integrate_constant_spin(params):
    state = RigidBodyState(IDENTITY_POSE, np.array([0.0, 0.0, 0.1, 0.0, 0.0, 0.0]))
    for _ in range(200):
        state = integrate_step(state, params, np.zeros(6), 0.05)
    q, _, _ = pose_to_parts(state.pose)
    assert np.allclose(q, rot_from_axis_angle(np.array([0.0, 0.0, 1.0]), 1.0), atol=1e-6)


def test_integrate_rejects_nonpositive_step(params):
    with pytest.raises(ValueError):
        integrate_step(RigidBodyState(IDENTITY_POSE, np.zeros(6)), params, np.zeros(6), 0.0)


def test_long_integration_stays_unit(rng, params, random_pose):
    state = RigidBodyState(random_pose, 0.1 * rng.standard_normal(6))
    for _ in range(10_000):
        state = integrate_step(state, params, np.zeros(6), 0.05)
    assert is_unit_pose(state.pose)


def test_propagate_pose_follows_screw_motion(rng, random_pose):
    w = np.concatenate((0.05 * rng.standard_normal(3), 0.2 * rng.standard_normal(3)))
    pose = random_pose
    for _ in range(200):
        pose = propagate_pose(pose, w, 0.05)
    closed = screw_motion(random_pose, w, 10.0)
    assert np.allclose(pose, closed, atol=1e-8) or np.allclose(pose, -closed, atol=1e-8)
