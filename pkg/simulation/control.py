"""Targets and the LQR tracking law for the asteroid scenario."""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_continuous_are
from scipy.spatial.transform import Rotation

from estimation.dq_algebra import (
    canonical,
    conj,
    normalize_quat,
    pose_to_parts,
    quat_mul,
    rotation_matrix,
)
from estimation.exceptions import ControlError
from estimation.logger import get_logger
from estimation.rigid_body import RigidBodyParams

# Set logger
logger = get_logger(__name__)

RICCATI_TOL = 1e-8
GOLDEN_RATIO = (1.0 + 5.0**0.5) / 2.0


def fibonacci_lattice(n: int, radius: float) -> NDArray:
    """
    Near-uniform points on a sphere from the golden-angle spiral.

    Parameters
    ----------
    n : int
        Number of points, at least 1.
    radius : float
        Sphere radius [m].

    Returns
    -------
    ndarray, shape (n, 3)
    """
    if n < 1:
        logger.exception("Invalid parameter: n")
        raise ValueError("The lattice needs at least one point.")
    i = np.arange(n)
    polar = np.arccos(1.0 - 2.0 * (i + 0.5) / n)
    azimuth = 2.0 * np.pi * i / GOLDEN_RATIO
    points = np.column_stack((
        np.cos(azimuth) * np.sin(polar),
        np.sin(azimuth) * np.sin(polar),
        np.cos(polar),
    ))
    return radius * points


def grid_start_positions(n: int, plane: float, spacing: float) -> NDArray:
    """Square grid centred on the x axis in the plane ``x = plane``."""
    side = int(np.ceil(np.sqrt(n)))
    positions = []
    for index in range(n):
        row, col = divmod(index, side)
        positions.append([plane, spacing * (col - (side - 1) / 2.0), spacing * (row - (side - 1) / 2.0)])
    return np.array(positions, dtype=float)


def pointing_attitude(position: NDArray, center: NDArray) -> NDArray:
    """
    Attitude whose body z axis points from ``position`` to ``center``.

    Roll is fixed by projecting the inertial z axis onto the plane normal to the boresight;
    the inertial x axis is used when the boresight is (anti)parallel to inertial z.
    """
    boresight = np.asarray(center, dtype=float) - np.asarray(position, dtype=float)
    z_axis = boresight / np.linalg.norm(boresight)
    reference = np.array([0.0, 0.0, 1.0])
    if abs(reference @ z_axis) > 1.0 - 1e-6:
        reference = np.array([1.0, 0.0, 0.0])
    x_axis = reference - (reference @ z_axis) * z_axis
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    # Columns are the body axes in inertial coordinates
    x, y, z, w = Rotation.from_matrix(np.column_stack((x_axis, y_axis, z_axis))).as_quat()
    return canonical(normalize_quat(np.array([w, x, y, z])))


@dataclass(frozen=True)
class LqrGain:
    K: NDArray
    P: NDArray


def lqr_gain(q_weight: float, r_weight: float) -> LqrGain:
    """
    Infinite-horizon gain of the decoupled double integrators.

    ``A = [[0, I6], [0, 0]]``, ``B = [[0], [I6]]``, ``Q = q_weight I12``, ``R = r_weight I6``.

    Raises
    ------
    ControlError
        If the Riccati solution does not satisfy its equation within 1e-8.
    """
    A = np.zeros((12, 12))
    A[:6, 6:] = np.eye(6)
    B = np.vstack((np.zeros((6, 6)), np.eye(6)))
    Q = q_weight * np.eye(12)
    R = r_weight * np.eye(6)
    try:
        P = solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.exception("Riccati equation could not be solved.")
        raise ControlError(f"{e}")
    residual = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    if np.max(np.abs(residual)) > RICCATI_TOL:
        raise ControlError(f"Riccati residual {np.max(np.abs(residual)):.3g} above tolerance.")
    return LqrGain(K=np.linalg.solve(R, B.T @ P), P=P)


def tracking_error(pose: NDArray, w: NDArray, target_pose: NDArray) -> NDArray:
    """12-vector (small-angle attitude, position, angular rate, inertial linear rate)."""
    q, r, _ = pose_to_parts(pose)
    q_target, r_target, _ = pose_to_parts(target_pose)
    attitude = 2.0 * canonical(quat_mul(conj(q_target), q))[1:]
    v_inertial = rotation_matrix(q) @ np.asarray(w[3:6])
    return np.concatenate((attitude, r - r_target, np.asarray(w[:3]), v_inertial))


def lqr_track(pose: NDArray, w: NDArray, target_pose: NDArray, params: RigidBodyParams, gain: LqrGain) -> NDArray:
    """
    Dual force ``(τ, f_B)`` driving the estimated pose towards ``target_pose``.

    The commanded accelerations ``-K e`` are mapped through the inertia (with gyroscopic
    compensation) and the mass (rotated into the body frame).
    """
    accel = -gain.K @ tracking_error(pose, w, target_pose)
    omega = np.asarray(w[:3])
    torque = params.inertia @ accel[:3] + np.cross(omega, params.inertia @ omega)
    force = params.mass * rotation_matrix(pose[:4]).T @ accel[3:]
    return np.concatenate((torque, force))
