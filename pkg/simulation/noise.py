"""Noise levels (from the SNR, the asteroid settings or explicit keys) and the sensor models that draw from them."""

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from estimation.dq_algebra import (
    conj,
    dq_mul,
    extend_to_r8,
    inertial_position,
    quat_mul,
    recover_scalar,
    rotate,
)
from estimation.exceptions import DomainError
from estimation.logger import get_logger
from estimation.mekf_single import NoiseConfig
from simulation.config import ScenarioConfig

# Set logger
logger = get_logger(__name__)

ATTITUDE_SCALE = 1.0
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class NoiseModel:
    """
    Sensor standard deviations and process covariances for one SNR.

    ``std_q`` applies to the vector part of attitude quaternions, ``std_r`` [m] to positions.
    ``std_omega``/``std_v`` are the dual velocity measurement noises, ``q_bias_omega`` and
    ``q_bias_v`` the bias random-walk intensities.
    """

    std_q: float
    std_r: float
    q_bias_omega: float
    q_bias_v: float
    std_omega: float = 0.0
    std_v: float = 0.0

    @property
    def R(self) -> NDArray:
        return np.diag([self.std_q**2] * 3 + [self.std_r**2] * 3)

    @property
    def Q_omega(self) -> NDArray:
        return np.diag([self.std_omega**2] * 3 + [self.std_v**2] * 3)

    @property
    def Q_bias(self) -> NDArray:
        return np.diag([self.q_bias_omega] * 3 + [self.q_bias_v] * 3)

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(Q_omega=self.Q_omega, Q_bias=self.Q_bias, R=self.R)

    @staticmethod
    def initial_covariance() -> NDArray:
        return block_diag(1e-1 * np.eye(6), 1e-2 * np.eye(6))


# Synthesized noise switched off; filters keep their own tuning
SILENT = NoiseModel(std_q=0.0, std_r=0.0, q_bias_omega=0.0, q_bias_v=0.0)


def noise_from_snr(snr: float, position_scale: float = 10.0) -> NoiseModel:
    """
    Noise levels for a signal-to-noise ratio.

    ``std_q = 1/SNR``, ``std_r = position_scale/SNR``, bias walks ``1e-3/SNR²`` (angular) and
    ``1e-1/SNR²`` (linear).
    """
    if snr <= 0:
        logger.exception("Invalid parameter: snr")
        raise ValueError("The SNR must be positive.")
    return NoiseModel(
        std_q=ATTITUDE_SCALE / snr,
        std_r=position_scale / snr,
        q_bias_omega=1e-3 / snr**2,
        q_bias_v=1e-1 / snr**2,
    )


# Settings of the asteroid swarming scenario
ASTEROID_NOISE = NoiseModel(
    std_q=float(np.sqrt(2.79e-7)),
    std_r=float(np.sqrt(8.55e-4)),
    q_bias_omega=1e-6,
    q_bias_v=1e-4,
)
EXPLICIT_NOISE_KEYS = ("std_q", "std_r", "q_bias_omega", "q_bias_v")


def scenario_noise(config: ScenarioConfig, snr: float) -> NoiseModel:
    """
    Noise levels of one run.

    The asteroid scenario starts from ``ASTEROID_NOISE``, every other scenario from
    ``noise_from_snr``. Nonzero ``std_q``, ``std_r``, ``q_bias_omega`` or ``q_bias_v`` in the
    configuration replace the corresponding level.
    """
    base = ASTEROID_NOISE if config.scenario == "asteroid" else noise_from_snr(snr, config.position_scale)
    explicit = {key: getattr(config, key) for key in EXPLICIT_NOISE_KEYS if getattr(config, key) > 0.0}
    if explicit:
        logger.debug(f"Explicit noise levels: {explicit}")
    return replace(base, **explicit)


def _unit_ball_draw(rng: np.random.Generator, std: NDArray) -> NDArray:
    for _ in range(MAX_RESAMPLES):
        v = std * rng.standard_normal(std.shape[0])
        if np.linalg.norm(v[:3]) < 1.0:
            return v
    raise DomainError("Attitude noise repeatedly fell outside the unit ball.")


def measure_absolute_pose(pose: NDArray, noise: NoiseModel, rng: np.random.Generator) -> NDArray:
    """Absolute pose with reduced-coordinate noise ``q ⊗ extend(v)``, ``v ~ N(0, R)``."""
    std = np.sqrt(np.diag(noise.R))
    return dq_mul(pose, extend_to_r8(_unit_ball_draw(rng, std)))


def perturb_estimate(pose: NDArray, bias: NDArray, covariance: NDArray, rng: np.random.Generator) -> tuple[NDArray, NDArray]:
    """Initial estimate offset from truth by a draw consistent with the 12x12 prior ``covariance``."""
    std = np.sqrt(np.diag(covariance))
    offset = _unit_ball_draw(rng, std[:6])
    return dq_mul(pose, extend_to_r8(offset)), np.asarray(bias) + std[6:12] * rng.standard_normal(6)


def measure_relative(pose_i: NDArray, pose_k: NDArray, noise: NoiseModel, rng: np.random.Generator) -> tuple[NDArray, NDArray]:
    """Relative attitude ``q_i* q_k ⊗ δq`` and position of ``k`` in the body frame of ``i`` plus noise."""
    q_i, q_k = pose_i[:4], pose_k[:4]
    q_rel = quat_mul(conj(q_i), q_k)
    n = _unit_ball_draw(rng, np.full(3, noise.std_q))
    q_rel = quat_mul(q_rel, np.concatenate(([recover_scalar(n)], n)))
    r_rel = rotate(conj(q_i), inertial_position(pose_k) - inertial_position(pose_i))
    r_rel = r_rel + noise.std_r * rng.standard_normal(3)
    return q_rel, r_rel


def measure_velocity(w_true: NDArray, bias: NDArray, noise: NoiseModel, rng: np.random.Generator) -> NDArray:
    """Dual velocity measurement ``ω + b + η``."""
    std = np.sqrt(np.diag(noise.Q_omega))
    return np.asarray(w_true) + np.asarray(bias) + std * rng.standard_normal(6)


def walk_bias(bias: NDArray, noise: NoiseModel, dt: float, rng: np.random.Generator) -> NDArray:
    std = np.sqrt(np.diag(noise.Q_bias) * dt)
    return np.asarray(bias) + std * rng.standard_normal(6)


def imu_specific_force(w_true: NDArray, offset: NDArray) -> NDArray:
    """Specific force at body offset ``offset`` for constant body dual velocity (gravity neglected)."""
    omega, v = np.asarray(w_true[:3]), np.asarray(w_true[3:6])
    return np.cross(omega, v) + np.cross(omega, np.cross(omega, offset))
