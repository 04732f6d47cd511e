"""
Quaternion and dual-quaternion algebra.

All 4-vectors are stored scalar-first. Dual quaternions are 8-vectors laid out as
``(real || dual)``. Dual velocities, dual forces and reduced pose errors are 6-vectors
``(angular || linear)``. Every function is pure and returns fresh arrays.
"""

import numpy as np
from numpy.typing import NDArray

from estimation.exceptions import DomainError, InvariantError
from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)

Quaternion = NDArray[np.float64]
DualQuaternion = NDArray[np.float64]

UNIT_TOL = 1e-9
SCALAR_SLACK = 1e-12

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
IDENTITY_POSE = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
# Conjugation matrix I*
CONJ_MATRIX = np.diag([1.0, -1.0, -1.0, -1.0])


def skew(v: NDArray) -> NDArray:
    """Cross-product matrix ``[v x]``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def conj(q: Quaternion) -> Quaternion:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def vector_quat(v: NDArray) -> Quaternion:
    """Embed a 3-vector as a vector quaternion (zero scalar part)."""
    return np.concatenate(([0.0], np.asarray(v, dtype=float)))


def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product ``ab``."""
    a0, av = a[0], np.asarray(a[1:], dtype=float)
    b0, bv = b[0], np.asarray(b[1:], dtype=float)
    return np.concatenate(([a0 * b0 - av @ bv], a0 * bv + b0 * av + np.cross(av, bv)))


def lqm(a: Quaternion) -> NDArray:
    """Left multiplication matrix: ``lqm(a) @ b == quat_mul(a, b)``."""
    m = np.empty((4, 4))
    m[0, 0] = a[0]
    m[0, 1:] = -a[1:]
    m[1:, 0] = a[1:]
    m[1:, 1:] = a[0] * np.eye(3) + skew(a[1:])
    return m


def rqm(a: Quaternion) -> NDArray:
    """Right multiplication matrix: ``rqm(a) @ b == quat_mul(b, a)``."""
    m = np.empty((4, 4))
    m[0, 0] = a[0]
    m[0, 1:] = -a[1:]
    m[1:, 0] = a[1:]
    m[1:, 1:] = a[0] * np.eye(3) - skew(a[1:])
    return m


def cross_matrix(a: Quaternion) -> NDArray:
    """4x4 matrix realising the cross product of vector parts, scalar row zero."""
    m = np.zeros((4, 4))
    m[1:, 1:] = skew(a[1:])
    return m


def quat_matrices(a: Quaternion) -> tuple[NDArray, NDArray, NDArray]:
    """
    Left, right and cross multiplication matrices of a quaternion.

    Parameters
    ----------
    a : ndarray, shape (4,)
        Scalar-first quaternion.

    Returns
    -------
    left, right, cross : ndarray, shape (4, 4)
        ``left @ b = ab``, ``right @ b = ba`` and ``cross @ b = (0, a_v x b_v)``.
    """
    return lqm(a), rqm(a), cross_matrix(a)


def recover_scalar(vbar: NDArray) -> float:
    """
    Scalar part of a unit quaternion from its vector part.

    Parameters
    ----------
    vbar : ndarray, shape (3,)
        Vector part, expected inside the closed unit ball.

    Returns
    -------
    float
        ``sqrt(1 - |vbar|^2)``, never negative.

    Raises
    ------
    DomainError
        If ``|vbar| > 1 + 1e-12``; the reduced error state has diverged.
    """
    norm = float(np.linalg.norm(vbar))
    if norm > 1.0 + SCALAR_SLACK:
        raise DomainError(f"Vector part norm {norm:.6g} exceeds 1, scalar part undefined.")
    return float(np.sqrt(max(0.0, 1.0 - norm * norm)))


def canonical(q: Quaternion) -> Quaternion:
    """Sign-fix a quaternion so the scalar part is nonnegative."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q.copy()


def normalize_quat(q: Quaternion) -> Quaternion:
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def is_unit_quat(q: Quaternion, tol: float = UNIT_TOL) -> bool:
    return bool(np.all(np.isfinite(q)) and abs(np.linalg.norm(q) - 1.0) <= tol)


def rotation_matrix(q: Quaternion) -> NDArray:
    """Active rotation matrix ``A(q)`` with ``A(q) v == vec(q v q*)``."""
    q0, v = q[0], np.asarray(q[1:], dtype=float)
    return (q0 * q0 - v @ v) * np.eye(3) + 2.0 * np.outer(v, v) + 2.0 * q0 * skew(v)


def rotate(q: Quaternion, v: NDArray) -> NDArray:
    return quat_mul(quat_mul(q, vector_quat(v)), conj(q))[1:]


def rot_from_axis_angle(n: NDArray, theta: float) -> Quaternion:
    """Rotation of ``theta`` radians about the unit axis ``n``: ``(cos θ/2, n sin θ/2)``."""
    half = 0.5 * theta
    return np.concatenate(([np.cos(half)], np.sin(half) * np.asarray(n, dtype=float)))


def random_unit_quaternion(rng: np.random.Generator) -> Quaternion:
    """Uniformly distributed rotation, scalar part nonnegative."""
    return canonical(normalize_quat(rng.standard_normal(4)))


def quat_scale_error(q: Quaternion, mu: float) -> Quaternion:
    """
    Scale the rotation carried by a unit quaternion.

    Returns ``(sqrt(1 - mu^2 |q_v|^2), mu q_v)``, a unit quaternion. ``mu = 0`` gives the
    identity and ``mu = 1`` returns ``q`` when its scalar part is nonnegative.

    Raises
    ------
    DomainError
        If ``mu^2 |q_v|^2 > 1``.
    """
    scaled = mu * np.asarray(q[1:], dtype=float)
    radicand = 1.0 - scaled @ scaled
    if radicand < -SCALAR_SLACK:
        raise DomainError(f"Quaternion scaling with mu={mu} leaves the unit ball.")
    return np.concatenate(([np.sqrt(max(0.0, radicand))], scaled))


def quat_average(qs) -> Quaternion:
    """
    Rotation-matrix average of unit quaternions.

    Maximises ``Tr(A(q) C^T)`` with ``C = sum_k A(q_k)`` through the Davenport q-method:
    the answer is the eigenvector of the symmetric 4x4 matrix ``K`` with the largest
    eigenvalue. The result is invariant to input order and input signs.

    Parameters
    ----------
    qs : sequence of ndarray, shape (4,)
        Unit quaternions.

    Returns
    -------
    ndarray, shape (4,)
        Unit quaternion with nonnegative scalar part.

    Raises
    ------
    ValueError
        If ``qs`` is empty.
    """
    qs = [np.asarray(q, dtype=float) for q in qs]
    if not qs:
        logger.exception("Invalid parameter: empty quaternion sequence")
        raise ValueError("Cannot average an empty sequence of quaternions.")

    c = sum(rotation_matrix(q) for q in qs)
    trace = np.trace(c)
    z = np.array([c[2, 1] - c[1, 2], c[0, 2] - c[2, 0], c[1, 0] - c[0, 1]])
    k = np.empty((4, 4))
    k[0, 0] = trace
    k[0, 1:] = z
    k[1:, 0] = z
    k[1:, 1:] = c + c.T - trace * np.eye(3)

    _, vectors = np.linalg.eigh(k)
    return canonical(normalize_quat(vectors[:, -1]))


## Dual quaternions ##

def dq_real(x: DualQuaternion) -> Quaternion:
    return np.asarray(x[:4], dtype=float)


def dq_dual(x: DualQuaternion) -> Quaternion:
    return np.asarray(x[4:], dtype=float)


def dq_conj(x: DualQuaternion) -> DualQuaternion:
    return np.concatenate((conj(x[:4]), conj(x[4:])))


def dq_mul(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    """Dual quaternion product: real ``a_r b_r``, dual ``a_r b_d + a_d b_r``."""
    real = quat_mul(a[:4], b[:4])
    dual = quat_mul(a[:4], b[4:]) + quat_mul(a[4:], b[:4])
    return np.concatenate((real, dual))


def ldqm(a: DualQuaternion) -> NDArray:
    """8x8 left multiplication matrix: ``ldqm(a) @ b == dq_mul(a, b)``."""
    m = np.zeros((8, 8))
    m[:4, :4] = lqm(a[:4])
    m[4:, :4] = lqm(a[4:])
    m[4:, 4:] = lqm(a[:4])
    return m


def rdqm(b: DualQuaternion) -> NDArray:
    """8x8 right multiplication matrix: ``rdqm(b) @ a == dq_mul(a, b)``."""
    m = np.zeros((8, 8))
    m[:4, :4] = rqm(b[:4])
    m[4:, :4] = rqm(b[4:])
    m[4:, 4:] = rqm(b[:4])
    return m


def dq_cross(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    """Dual cross product of the vector parts: ``a_r x b_r + ε(a_r x b_d + a_d x b_r)``."""
    real = np.cross(a[1:4], b[1:4])
    dual = np.cross(a[1:4], b[5:8]) + np.cross(a[5:8], b[1:4])
    return np.concatenate(([0.0], real, [0.0], dual))


def dual_cross_matrix(w: NDArray) -> NDArray:
    """6x6 matrix of ``w x (.)`` on reduced 6-vectors: ``[[ω×, 0], [v×, ω×]]``."""
    m = np.zeros((6, 6))
    m[:3, :3] = skew(w[:3])
    m[3:, :3] = skew(w[3:])
    m[3:, 3:] = skew(w[:3])
    return m


def embed_velocity(w: NDArray) -> DualQuaternion:
    """Dual velocity 6-vector ``(ω, v)`` as the dual quaternion ``(0, ω) + ε(0, v)``."""
    return np.concatenate(([0.0], w[:3], [0.0], w[3:6]))


def reduce(x: DualQuaternion) -> NDArray:
    """Drop both scalar parts: the 6-vector ``(vec x_r, vec x_d)``."""
    return np.concatenate((x[1:4], x[5:8]))


def pose_from_parts(q: Quaternion, r_inertial: NDArray) -> DualQuaternion:
    """
    Build a unit dual quaternion from attitude and inertial position.

    The dual part is ``½ r q`` with ``r = (0, r_I)``.

    Raises
    ------
    InvariantError
        If ``q`` is not unit within 1e-9.
    """
    if not is_unit_quat(q):
        raise InvariantError(f"Attitude quaternion is not unit (norm {np.linalg.norm(q):.12g}).")
    q = np.asarray(q, dtype=float)
    dual = 0.5 * quat_mul(vector_quat(r_inertial), q)
    return np.concatenate((q, dual))


def pose_to_parts(pose: DualQuaternion) -> tuple[Quaternion, NDArray, NDArray]:
    """Attitude, inertial position ``vec(2 q_d q_r*)`` and body position ``vec(2 q_r* q_d)``."""
    qr, qd = dq_real(pose), dq_dual(pose)
    r_inertial = 2.0 * quat_mul(qd, conj(qr))[1:]
    r_body = 2.0 * quat_mul(conj(qr), qd)[1:]
    return qr, r_inertial, r_body


def inertial_position(pose: DualQuaternion) -> NDArray:
    return 2.0 * quat_mul(pose[4:], conj(pose[:4]))[1:]


def normalize_pose(pose: DualQuaternion) -> DualQuaternion:
    """Project onto the unit dual quaternions: ``|q_r| = 1`` and ``q_r . q_d = 0``."""
    scale = np.linalg.norm(pose[:4])
    qr = pose[:4] / scale
    qd = pose[4:] / scale
    qd = qd - (qr @ qd) * qr
    return np.concatenate((qr, qd))


def is_unit_pose(pose: DualQuaternion, tol: float = UNIT_TOL) -> bool:
    return is_unit_quat(pose[:4], tol) and abs(float(pose[:4] @ pose[4:])) <= tol


def extend_to_r8(dx: NDArray) -> DualQuaternion:
    """
    Restore the scalar parts of a reduced error ``(ν, δp)``.

    Real part ``(sqrt(1 - |ν|^2), ν)``, dual part ``(-ν.δp / sqrt(1 - |ν|^2), δp)``;
    the result is a unit dual quaternion by construction.

    Raises
    ------
    DomainError
        If ``|ν| >= 1`` (no unit quaternion with a finite dual scalar exists).
    """
    nu, dp = np.asarray(dx[:3], dtype=float), np.asarray(dx[3:6], dtype=float)
    scalar = recover_scalar(nu)
    if scalar == 0.0:
        raise DomainError("Attitude correction is a half turn, dual scalar part undefined.")
    return np.concatenate(([scalar], nu, [-(nu @ dp) / scalar], dp))
