"""
Rigid-body motion in dual-quaternion form.

Dual velocities ``w`` are body-frame 6-vectors ``(ω, v)``; dual forces are body-frame
6-vectors ``(τ, f)``. The pose obeys ``q̇ = ½ q ω̂`` and the velocity obeys the dual
dynamics with the extended inertia ``blkdiag(1, m I3, 1, J)`` acting on the swapped
velocity ``(0, v) + ε(0, ω)``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from estimation.dq_algebra import (
    dq_cross,
    dq_mul,
    embed_velocity,
    normalize_pose,
    pose_from_parts,
    rot_from_axis_angle,
)
from estimation.exceptions import InvariantError
from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)


@dataclass(frozen=True)
class RigidBodyParams:
    """Mass [kg] and body inertia [kg m^2] of one spacecraft."""

    mass: float
    inertia: NDArray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
            raise InvariantError("Inertia must be a symmetric 3x3 matrix.")
        object.__setattr__(self, "inertia", inertia)

    @property
    def extended_inertia(self) -> NDArray:
        return block_diag(1.0, self.mass * np.eye(3), 1.0, self.inertia)


@dataclass(frozen=True)
class RigidBodyState:
    pose: NDArray
    velocity: NDArray


def _swap(x: NDArray) -> NDArray:
    return np.concatenate((x[4:], x[:4]))


def kinematics_deriv(pose: NDArray, w: NDArray) -> NDArray:
    """Pose derivative ``½ q̂ ω̂`` as an 8-vector."""
    return 0.5 * dq_mul(pose, embed_velocity(w))


def dynamics_deriv(w: NDArray, params: RigidBodyParams, f: NDArray) -> NDArray:
    """
    Dual velocity derivative from the dual dynamics.

    Solves ``J8 (ω̂ˢ)' = f̂ˢ - ω̂ x (J8 ω̂ˢ)`` where the superscript swaps real and dual
    parts. Component-wise this is Euler's equation ``J ω̇ = τ - ω x Jω`` and Newton's law
    in the body frame ``m v̇ = f - m ω x v``.

    Parameters
    ----------
    w : ndarray, shape (6,)
        Body dual velocity ``(ω, v)``.
    params : RigidBodyParams
    f : ndarray, shape (6,)
        Body dual force ``(τ, f)``.

    Returns
    -------
    ndarray, shape (6,)
        ``(ω̇, v̇)``.

    Raises
    ------
    InvariantError
        If the extended inertia matrix is singular.
    """
    w_hat = embed_velocity(w)
    f_hat = embed_velocity(f)
    j8 = params.extended_inertia
    momentum = j8 @ _swap(w_hat)
    rhs = _swap(f_hat) - dq_cross(w_hat, momentum)
    try:
        accel = np.linalg.solve(j8, rhs)
    except np.linalg.LinAlgError as e:
        logger.exception("Extended inertia matrix is singular.")
        raise InvariantError(f"{e}")
    accel = _swap(accel)
    return np.concatenate((accel[1:4], accel[5:8]))


def _rk4(deriv, y: NDArray, dt: float) -> NDArray:
    k1 = deriv(y)
    k2 = deriv(y + 0.5 * dt * k1)
    k3 = deriv(y + 0.5 * dt * k2)
    k4 = deriv(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_step(state: RigidBodyState, params: RigidBodyParams, f: NDArray, dt: float) -> RigidBodyState:
    """One RK4 step of the coupled kinematics and dynamics with the dual force held constant."""
    if dt <= 0:
        logger.exception("Invalid parameter: dt")
        raise ValueError("The integration step must be positive.")

    def deriv(y):
        return np.concatenate((kinematics_deriv(y[:8], y[8:]), dynamics_deriv(y[8:], params, f)))

    y = _rk4(deriv, np.concatenate((state.pose, state.velocity)), dt)
    return RigidBodyState(pose=normalize_pose(y[:8]), velocity=y[8:])


def propagate_pose(pose: NDArray, w: NDArray, dt: float) -> NDArray:
    """RK4 step of the kinematics alone with a constant body dual velocity."""
    w = np.asarray(w, dtype=float)
    return normalize_pose(_rk4(lambda y: kinematics_deriv(y, w), np.asarray(pose, dtype=float), dt))


def screw_motion(pose: NDArray, w: NDArray, t: float) -> NDArray:
    """
    Closed-form pose after moving for ``t`` seconds with constant body dual velocity ``w``.

    The displacement is expressed in the starting body frame and composed on the right.
    """
    omega, v = np.asarray(w[:3], dtype=float), np.asarray(w[3:6], dtype=float)
    rate = np.linalg.norm(omega)
    if rate < 1e-12:
        q = np.array([1.0, 0.0, 0.0, 0.0])
        r = v * t
    else:
        n = omega / rate
        theta = rate * t
        q = rot_from_axis_angle(n, theta)
        along = (n @ v) * n
        r = t * along + (np.sin(theta) / rate) * (v - along) + ((1.0 - np.cos(theta)) / rate) * np.cross(n, v)
    return dq_mul(pose, pose_from_parts(q, r))
