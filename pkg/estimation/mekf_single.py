"""
Single-satellite dual-quaternion MEKF in information form.

The error state is the reduced error dual quaternion ``(ν, δp)`` followed by the dual bias
``(b_ω, b_v)``; the pose-and-IMU scenario appends the accelerometer bias ``b_n``. After every
measurement the error state is reset to zero, so the correction is ``Δx = M u``.

Also provides the generic information-form primitives reused by the distributed filter.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from estimation.dq_algebra import (
    dq_conj,
    dq_mul,
    dual_cross_matrix,
    extend_to_r8,
    normalize_pose,
    reduce,
    skew,
)
from estimation.exceptions import DivergenceError, DomainError, FilterError
from estimation.logger import get_logger
from estimation.rigid_body import propagate_pose

# Set logger
logger = get_logger(__name__)


class SensorScenario(Enum):
    POSE_ONLY = "pose_only"
    POSE_AND_VELOCITY = "velocity"
    POSE_AND_IMU = "imu"


@dataclass(frozen=True)
class NoiseConfig:
    """
    Process and measurement covariances.

    ``Q_omega`` covers the dual velocity measurement noise (angular then linear), ``Q_bias`` the
    dual bias random walk, ``Q_n``/``Q_bn`` the accelerometer noise and bias walk of the IMU
    scenario, and ``R`` the reduced pose measurement. ``imu_offset`` is the accelerometer position
    in the body frame [m].
    """

    Q_omega: NDArray
    Q_bias: NDArray
    R: NDArray
    Q_n: NDArray = field(default_factory=lambda: np.zeros((3, 3)))
    Q_bn: NDArray = field(default_factory=lambda: np.zeros((3, 3)))
    imu_offset: NDArray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class SingleFilterState:
    pose: NDArray
    dual_bias: NDArray
    covariance: NDArray
    imu_bias: Optional[NDArray] = None

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


def initial_state(pose, covariance, dual_bias=None, imu_bias=None) -> SingleFilterState:
    """Build a filter state; a 15x15 covariance requires (and defaults) the IMU bias."""
    covariance = np.asarray(covariance, dtype=float)
    if covariance.shape not in ((12, 12), (15, 15)):
        raise FilterError(f"Covariance must be 12x12 or 15x15, got {covariance.shape}.")
    dual_bias = np.zeros(6) if dual_bias is None else np.asarray(dual_bias, dtype=float)
    if covariance.shape == (15, 15) and imu_bias is None:
        imu_bias = np.zeros(3)
    return SingleFilterState(
        pose=np.asarray(pose, dtype=float),
        dual_bias=dual_bias,
        covariance=covariance,
        imu_bias=None if imu_bias is None else np.asarray(imu_bias, dtype=float),
    )


## Information-form primitives ##

def symmetrize(P: NDArray) -> NDArray:
    return 0.5 * (P + P.T)


def _inverse(matrix: NDArray, name: str) -> NDArray:
    try:
        inverse = np.linalg.inv(matrix)
    except np.linalg.LinAlgError as e:
        logger.exception(f"Matrix inversion failed: {name}")
        raise FilterError(f"{name} is singular: {e}")
    if not np.all(np.isfinite(inverse)):
        raise FilterError(f"{name} is numerically singular.")
    return inverse


def information(H: NDArray, R: NDArray, z: NDArray) -> tuple[NDArray, NDArray]:
    """Information vector ``u = Hᵀ R⁻¹ z`` and matrix ``U = Hᵀ R⁻¹ H``."""
    R_inv = _inverse(R, "R")
    weighted = H.T @ R_inv
    return weighted @ z, weighted @ H


def fuse_information(P: NDArray, U: NDArray) -> NDArray:
    """Posterior covariance ``M = (P⁻¹ + U)⁻¹``."""
    return _inverse(_inverse(P, "P") + U, "P^-1 + U")


def info_update(x_hat: NDArray, P: NDArray, H: NDArray, R: NDArray, z: NDArray) -> tuple[NDArray, NDArray]:
    """
    Information-form Kalman update.

    Parameters
    ----------
    x_hat : ndarray, shape (n,)
        Prior state.
    P : ndarray, shape (n, n)
        Prior covariance.
    H : ndarray, shape (m, n)
    R : ndarray, shape (m, m)
    z : ndarray, shape (m,)

    Returns
    -------
    delta_x : ndarray, shape (n,)
        ``M (u - U x_hat)``.
    P_plus : ndarray, shape (n, n)
        ``M``, symmetrized.

    Raises
    ------
    FilterError
        If ``P``, ``R`` or ``P⁻¹ + U`` cannot be inverted.
    """
    u, U = information(H, R, z)
    M = fuse_information(P, U)
    return M @ (u - U @ x_hat), symmetrize(M)


## Error dynamics ##

def pose_error_jacobians(w_hat: NDArray) -> tuple[NDArray, NDArray]:
    """F and G of the 12-dim error state for an estimated dual velocity ``w_hat``."""
    F = np.zeros((12, 12))
    F[:6, :6] = -dual_cross_matrix(w_hat)
    F[:6, 6:] = -0.5 * np.eye(6)
    G = block_diag(-0.5 * np.eye(6), np.eye(6))
    return F, G


def imu_error_jacobians(w_hat: NDArray, bias_v: NDArray, offset: NDArray) -> tuple[NDArray, NDArray]:
    """F and G of the 15-dim error state (gravity neglected)."""
    omega = w_hat[:3]
    coupling = -skew(bias_v) + skew(np.cross(omega, offset)) + skew(omega) @ skew(offset)
    F = np.zeros((15, 15))
    F[:12, :12] = pose_error_jacobians(w_hat)[0]
    F[9:12, 6:9] = coupling
    F[9:12, 9:12] = -skew(omega)
    F[9:12, 12:15] = np.eye(3)
    G = block_diag(-0.5 * np.eye(6), np.eye(9))
    G[9:12, 0:3] += coupling
    return F, G


def process_noise(noise: NoiseConfig, scenario: SensorScenario) -> NDArray:
    if scenario is SensorScenario.POSE_AND_IMU:
        Q_bias = noise.Q_bias.copy()
        Q_bias[3:, 3:] = Q_bias[3:, 3:] + noise.Q_n
        return block_diag(noise.Q_omega, Q_bias, noise.Q_bn)
    return block_diag(noise.Q_omega, noise.Q_bias)


def propagate_covariance(P: NDArray, F: NDArray, G: NDArray, Q: NDArray, dt: float) -> NDArray:
    """First-order discretised Riccati step ``Φ P Φᵀ + dt G Q Gᵀ`` with ``Φ = I + F dt``."""
    phi = np.eye(P.shape[0]) + F * dt
    return symmetrize(phi @ P @ phi.T + dt * (G @ Q @ G.T))


def linear_bias_rate(w_hat: NDArray, bias_v: NDArray, n_hat: NDArray, offset: NDArray) -> NDArray:
    """Linear velocity bias drift ``-ω x b_v - n + ω x (ω x r)`` driven by the accelerometer."""
    omega = w_hat[:3]
    return -np.cross(omega, bias_v) - n_hat + np.cross(omega, np.cross(omega, offset))


def estimated_velocity(
    state: SingleFilterState,
    scenario: SensorScenario,
    w_measured: Optional[NDArray] = None,
) -> NDArray:
    """Estimated body dual velocity for the sensor scenario."""
    if scenario is SensorScenario.POSE_ONLY:
        return -state.dual_bias
    if w_measured is None:
        raise FilterError(f"Scenario {scenario.value} needs a velocity measurement.")
    w_measured = np.asarray(w_measured, dtype=float)
    if scenario is SensorScenario.POSE_AND_VELOCITY:
        return w_measured - state.dual_bias
    return np.concatenate((w_measured[:3] - state.dual_bias[:3], -state.dual_bias[3:]))


def time_update(
    state: SingleFilterState,
    scenario: SensorScenario,
    noise: NoiseConfig,
    dt: float,
    w_measured: Optional[NDArray] = None,
    n_measured: Optional[NDArray] = None,
) -> SingleFilterState:
    """
    Propagate the estimate and covariance over ``dt``.

    Parameters
    ----------
    state : SingleFilterState
    scenario : SensorScenario
        Pose only (``ω̂ = -b̂``), pose with dual velocity (``ω̂ = ω_m - b̂``) or pose with IMU
        (gyro rate plus accelerometer; ``v̂ = -b̂_v`` with the bias driven by the specific force).
    noise : NoiseConfig
    dt : float
        Step [s].
    w_measured : ndarray, shape (6,), optional
        Measured dual velocity. Only the angular part is read in the IMU scenario.
    n_measured : ndarray, shape (3,), optional
        Measured specific force (IMU scenario).

    Returns
    -------
    SingleFilterState

    Raises
    ------
    FilterError
        If an input required by the scenario is missing or the state size does not match.
    """
    is_imu = scenario is SensorScenario.POSE_AND_IMU
    if is_imu != (state.dim == 15):
        raise FilterError(f"A {state.dim}-dim state does not match scenario {scenario.value}.")

    w_hat = estimated_velocity(state, scenario, w_measured)
    pose = propagate_pose(state.pose, w_hat, dt)
    dual_bias = state.dual_bias

    if is_imu:
        if n_measured is None:
            raise FilterError("Scenario imu needs a specific force measurement.")
        n_hat = np.asarray(n_measured, dtype=float) - state.imu_bias
        F, G = imu_error_jacobians(w_hat, state.dual_bias[3:], noise.imu_offset)
        drift = linear_bias_rate(w_hat, state.dual_bias[3:], n_hat, noise.imu_offset)
        dual_bias = np.concatenate((state.dual_bias[:3], state.dual_bias[3:] + dt * drift))
    else:
        F, G = pose_error_jacobians(w_hat)

    covariance = propagate_covariance(state.covariance, F, G, process_noise(noise, scenario), dt)
    return replace(state, pose=pose, dual_bias=dual_bias, covariance=covariance)


## Measurement update ##

def pose_residual(pose_estimate: NDArray, pose_measured: NDArray) -> NDArray:
    """Reduced error ``vec6(q̂* q_m)``, with the measurement sign chosen so the scalar is nonnegative."""
    error = dq_mul(dq_conj(pose_estimate), pose_measured)
    if error[0] < 0.0:
        error = -error
    return reduce(error)


def apply_pose_correction(pose: NDArray, correction: NDArray) -> NDArray:
    """Multiplicative update ``q̂ ⊗ δq̂`` with the scalar parts restored from the reduced correction."""
    try:
        delta = extend_to_r8(correction)
    except DomainError as e:
        logger.warning(f"Pose correction diverged: {e}")
        raise DivergenceError(f"{e}") from e
    return normalize_pose(dq_mul(pose, delta))


def measurement_update(state: SingleFilterState, noise: NoiseConfig, q_measured: NDArray) -> SingleFilterState:
    """
    Fuse an absolute pose measurement.

    Raises
    ------
    DivergenceError
        If the attitude correction leaves the unit ball.
    """
    z = pose_residual(state.pose, q_measured)
    H = np.zeros((6, state.dim))
    H[:, :6] = np.eye(6)
    delta_x, covariance = info_update(np.zeros(state.dim), state.covariance, H, noise.R, z)

    pose = apply_pose_correction(state.pose, delta_x[:6])
    dual_bias = state.dual_bias + delta_x[6:12]
    imu_bias = None if state.imu_bias is None else state.imu_bias + delta_x[12:15]
    return SingleFilterState(pose=pose, dual_bias=dual_bias, covariance=covariance, imu_bias=imu_bias)


def error_vector(state: SingleFilterState, true_pose: NDArray, true_bias: NDArray, true_imu_bias=None) -> NDArray:
    """True error in the filter's coordinates: reduced ``q̂* q`` then bias differences."""
    parts = [pose_residual(state.pose, true_pose), np.asarray(true_bias) - state.dual_bias]
    if state.imu_bias is not None:
        parts.append(np.asarray(true_imu_bias) - state.imu_bias)
    return np.concatenate(parts)


def normalized_error_squared(state: SingleFilterState, true_pose: NDArray, true_bias: NDArray, true_imu_bias=None) -> float:
    """NEES ``eᵀ P⁻¹ e`` of the full error state."""
    e = error_vector(state, true_pose, true_bias, true_imu_bias)
    return float(e @ np.linalg.solve(state.covariance, e))
