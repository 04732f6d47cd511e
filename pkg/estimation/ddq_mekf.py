"""
Per-satellite distributed dual-quaternion MEKF.

Satellite ``i`` tracks the poses and dual biases of every node in ``V_i`` (ascending order).
The reduced error state stacks 12 entries per tracked node, ``(ν, δp, b_ω, b_v)``; the full
coordinates used for the hard-consensus information matrix stack 14 (8 pose + 6 bias).

Measurement rows follow ``V_i`` as well: a neighbour ``k`` contributes its relative attitude
and relative position (observer body frame), the owner contributes the absolute pose residual.
"""

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from estimation import mekf_single
from estimation.dq_algebra import (
    CONJ_MATRIX,
    conj,
    dq_real,
    dq_dual,
    lqm,
    quat_mul,
    rqm,
)
from estimation.exceptions import FilterError
from estimation.fleet_graph import FleetGraph, Neighbourhood, neighbourhood
from estimation.logger import get_logger
from estimation.mekf_single import NoiseConfig
from estimation.rigid_body import propagate_pose

# Set logger
logger = get_logger(__name__)

REDUCED_BLOCK = 12
FULL_BLOCK = 14
# Residual scaling of relative rows: ½ on attitude, ¼ on position
RELATIVE_SCALE = np.diag([0.5] * 3 + [0.25] * 3)
RELATIVE_SCALE_FULL = np.diag([0.5] * 4 + [0.25] * 4)


@dataclass(frozen=True)
class LocalFilterState:
    owner: int
    order: Neighbourhood
    poses: tuple
    biases: tuple
    covariance: NDArray

    def __post_init__(self):
        n = len(self.order)
        if len(self.poses) != n or len(self.biases) != n:
            raise FilterError(f"Node {self.owner} needs {n} poses and biases.")
        if self.covariance.shape != (REDUCED_BLOCK * n, REDUCED_BLOCK * n):
            raise FilterError(f"Covariance of node {self.owner} must be {REDUCED_BLOCK * n} square.")

    def index(self, node: int) -> int:
        return self.order.index(node)

    def pose_of(self, node: int) -> NDArray:
        return self.poses[self.index(node)]

    def bias_of(self, node: int) -> NDArray:
        return self.biases[self.index(node)]

    @property
    def own_pose(self) -> NDArray:
        return self.pose_of(self.owner)

    @property
    def own_bias(self) -> NDArray:
        return self.bias_of(self.owner)


@dataclass(frozen=True)
class MeasurementSet:
    """Absolute pose of the owner (optional) and ``neighbour -> (q_rel, r_rel)``."""

    absolute: Optional[NDArray] = None
    relative: Mapping[int, tuple] = field(default_factory=dict)


@dataclass(frozen=True)
class InfoPacket:
    sender: int
    u: NDArray
    U_reduced: NDArray
    U_full: NDArray
    poses: tuple = ()
    biases: tuple = ()


@dataclass(frozen=True)
class RelativePoseJacobians:
    """Sensitivities of the relative attitude ``q`` and position ``r`` to the error of ``i`` and ``k``."""

    q_dqi: NDArray
    q_dqk: NDArray
    r_dqi: NDArray
    r_dqk: NDArray
    r_dpi: NDArray
    r_dpk: NDArray

    @staticmethod
    def _bar(m: NDArray) -> NDArray:
        return m[1:, 1:]

    def observer_block(self, full: bool = False) -> NDArray:
        """Rows (q, r) against the observer's pose error, residual scaling applied."""
        return self._block(self.q_dqi, self.r_dqi, self.r_dpi, full)

    def target_block(self, full: bool = False) -> NDArray:
        return self._block(self.q_dqk, self.r_dqk, self.r_dpk, full)

    def _block(self, q_dq, r_dq, r_dp, full):
        if full:
            raw = np.block([[q_dq, np.zeros((4, 4))], [r_dq, r_dp]])
            return RELATIVE_SCALE_FULL @ raw
        raw = np.block([[self._bar(q_dq), np.zeros((3, 3))], [self._bar(r_dq), self._bar(r_dp)]])
        return RELATIVE_SCALE @ raw


def initial_local_state(graph: FleetGraph, owner: int, poses: Mapping[int, NDArray], biases: Mapping[int, NDArray], P0: NDArray) -> LocalFilterState:
    """Stack per-node poses, biases and the 12x12 prior ``P0`` in ``V_owner`` order."""
    order = neighbourhood(graph, owner)
    return LocalFilterState(
        owner=owner,
        order=order,
        poses=tuple(np.asarray(poses[m], dtype=float) for m in order.members),
        biases=tuple(np.asarray(biases[m], dtype=float) for m in order.members),
        covariance=block_diag(*[np.asarray(P0, dtype=float)] * len(order)),
    )


## Velocities and time update ##

def stack_velocity(own_measurement: NDArray, received: Mapping[int, NDArray], order: Neighbourhood) -> NDArray:
    """
    Stack the owner's and neighbours' dual velocity measurements in ``V_i`` order.

    Raises
    ------
    FilterError
        If ``received`` does not cover exactly the neighbours of the owner.
    """
    expected = set(order.others)
    if set(received) != expected:
        missing = sorted(expected - set(received))
        extra = sorted(set(received) - expected)
        raise FilterError(f"Velocity exchange for node {order.owner} incomplete (missing {missing}, unexpected {extra}).")
    blocks = [own_measurement if m == order.owner else received[m] for m in order.members]
    return np.concatenate([np.asarray(b, dtype=float) for b in blocks])


def estimate_velocity(stacked: NDArray, biases: Sequence[NDArray]) -> NDArray:
    """Blockwise ``ω_m - b̂``."""
    return np.asarray(stacked, dtype=float) - np.concatenate(biases)


def time_update(state: LocalFilterState, w_est: NDArray, noise: NoiseConfig, dt: float) -> LocalFilterState:
    """
    Propagate every tracked pose with its own velocity block and the stacked covariance.

    F, G and Q are block diagonal with one 12x12 block per tracked node.
    """
    n = len(state.order)
    if w_est.shape != (6 * n,):
        raise FilterError(f"Stacked velocity for node {state.owner} must have {6 * n} entries.")

    poses, F_blocks, G_blocks = [], [], []
    for index, pose in enumerate(state.poses):
        w_hat = w_est[6 * index:6 * index + 6]
        poses.append(propagate_pose(pose, w_hat, dt))
        F, G = mekf_single.pose_error_jacobians(w_hat)
        F_blocks.append(F)
        G_blocks.append(G)

    Q_node = mekf_single.process_noise(noise, mekf_single.SensorScenario.POSE_AND_VELOCITY)
    covariance = mekf_single.propagate_covariance(
        state.covariance, block_diag(*F_blocks), block_diag(*G_blocks), block_diag(*[Q_node] * n), dt
    )
    return replace(state, poses=tuple(poses), covariance=covariance)


## Measurement model ##

def jacobian_relative_pose(pose_i: NDArray, pose_k: NDArray) -> RelativePoseJacobians:
    """
    Jacobians of the relative measurement taken by ``i`` of ``k``.

    With ``a = q̂_i``, ``b = q̂_k`` (attitudes) and ``P_i``, ``P_k`` their dual parts, the
    relative attitude is ``c = a* b`` and the relative position ``2(C - D)`` with
    ``C = a* P_k b* a`` and ``D = a* P_i``. Derivatives are taken with respect to the
    4-dim error quaternions, around zero error.

    The attitude rows belong to the multiplicative residual ``ĉ* c_m``, which with
    ``c_m = δq_i* ĉ δq_k`` gives ``ĉ* δq_i* ĉ`` against the observer and the identity
    against the target. Both stay well conditioned at any relative rotation.
    """
    a, b = dq_real(pose_i), dq_real(pose_k)
    P_i, P_k = dq_dual(pose_i), dq_dual(pose_k)
    a_conj, b_conj = conj(a), conj(b)
    c = quat_mul(a_conj, b)
    C = quat_mul(quat_mul(quat_mul(a_conj, P_k), b_conj), a)
    D = quat_mul(a_conj, P_i)
    identity = np.eye(4)

    return RelativePoseJacobians(
        q_dqi=lqm(conj(c)) @ rqm(c) @ CONJ_MATRIX,
        q_dqk=identity,
        r_dqi=2.0 * (rqm(C) @ CONJ_MATRIX + lqm(C)) - 2.0 * (rqm(D) @ CONJ_MATRIX + lqm(D) @ (2.0 * identity + CONJ_MATRIX)),
        r_dqk=2.0 * lqm(quat_mul(a_conj, P_k)) @ rqm(quat_mul(b_conj, a)) @ (identity + CONJ_MATRIX),
        r_dpi=-2.0 * identity,
        r_dpk=2.0 * lqm(a_conj) @ rqm(a) @ lqm(b) @ rqm(b_conj),
    )


def predicted_relative(pose_i: NDArray, pose_k: NDArray) -> tuple[NDArray, NDArray]:
    """Predicted relative attitude ``q̂_i* q̂_k`` and position of ``k`` in the body frame of ``i``."""
    a, b = dq_real(pose_i), dq_real(pose_k)
    a_conj = conj(a)
    C = quat_mul(quat_mul(quat_mul(a_conj, dq_dual(pose_k)), conj(b)), a)
    D = quat_mul(a_conj, dq_dual(pose_i))
    return quat_mul(a_conj, b), 2.0 * (C - D)[1:]


def relative_residual(pose_i: NDArray, pose_k: NDArray, q_measured: NDArray, r_measured: NDArray) -> NDArray:
    """
    Scaled residual of one relative measurement.

    Attitude: ``vec(ĉ* c_m)`` with the sign giving a nonnegative scalar. Position: ``r_m - r̂``.
    """
    q_pred, r_pred = predicted_relative(pose_i, pose_k)
    q_error = quat_mul(conj(q_pred), np.asarray(q_measured, dtype=float))
    if q_error[0] < 0.0:
        q_error = -q_error
    raw = np.concatenate((q_error[1:], np.asarray(r_measured, dtype=float) - r_pred))
    return RELATIVE_SCALE @ raw


@dataclass(frozen=True)
class MeasurementRows:
    """One 6-row block of the stacked measurement for row member ``node``."""

    node: int
    z: NDArray
    columns: dict  # tracked node -> (reduced 6x6 block, full 8x8 block)
    is_absolute: bool


def measurement_rows(state: LocalFilterState, meas: MeasurementSet) -> list[MeasurementRows]:
    """Row blocks of satellite ``i`` in ``V_i`` order."""
    owner = state.owner
    rows = []
    for member in state.order.members:
        if member == owner:
            if meas.absolute is None:
                raise FilterError(f"Node {owner} has no absolute pose (sensed or synthesized).")
            z = mekf_single.pose_residual(state.own_pose, meas.absolute)
            rows.append(MeasurementRows(owner, z, {owner: (np.eye(6), np.eye(8))}, True))
            continue
        if member not in meas.relative:
            raise FilterError(f"Node {owner} is missing the relative measurement of node {member}.")
        q_m, r_m = meas.relative[member]
        pose_i, pose_k = state.own_pose, state.pose_of(member)
        jac = jacobian_relative_pose(pose_i, pose_k)
        rows.append(MeasurementRows(
            member,
            relative_residual(pose_i, pose_k, q_m, r_m),
            {
                member: (jac.target_block(), jac.target_block(full=True)),
                owner: (jac.observer_block(), jac.observer_block(full=True)),
            },
            False,
        ))
    return rows


def place_rows(rows: list, layout: Neighbourhood, row_members: Sequence[int]) -> tuple[NDArray, NDArray, NDArray]:
    """Lay row blocks into a ``layout`` column order; members without a block stay zero."""
    n = len(layout)
    by_node = {row.node: row for row in rows}
    z = np.zeros(6 * len(row_members))
    H = np.zeros((6 * len(row_members), REDUCED_BLOCK * n))
    H_full = np.zeros((8 * len(row_members), FULL_BLOCK * n))
    for r, member in enumerate(row_members):
        row = by_node.get(member)
        if row is None:
            continue
        z[6 * r:6 * r + 6] = row.z
        for node, (reduced, full) in row.columns.items():
            c = layout.index(node)
            H[6 * r:6 * r + 6, REDUCED_BLOCK * c:REDUCED_BLOCK * c + 6] = reduced
            H_full[8 * r:8 * r + 8, FULL_BLOCK * c:FULL_BLOCK * c + 8] = full
    return z, H, H_full


def assemble_measurement(state: LocalFilterState, meas: MeasurementSet) -> tuple[NDArray, NDArray, NDArray]:
    """
    Stacked residual ``z_i``, reduced Jacobian ``H̄_i`` and full Jacobian ``H_i``.

    Returns
    -------
    z : ndarray, shape (6(k+1),)
    H_reduced : ndarray, shape (6(k+1), 12(k+1))
    H_full : ndarray, shape (8(k+1), 14(k+1))

    Raises
    ------
    FilterError
        If the absolute pose or a neighbour's relative measurement is missing.
    """
    rows = measurement_rows(state, meas)
    return place_rows(rows, state.order, state.order.members)


def measurement_noise(order: Neighbourhood, R_absolute: NDArray, R_relative: NDArray, row_members=None) -> list[NDArray]:
    """Per-row 6x6 covariances in residual coordinates; rows of untracked members get identity."""
    row_members = order.members if row_members is None else row_members
    blocks = []
    for member in row_members:
        if member == order.owner:
            blocks.append(np.asarray(R_absolute, dtype=float))
        elif member in order:
            blocks.append(RELATIVE_SCALE @ np.asarray(R_relative, dtype=float) @ RELATIVE_SCALE)
        else:
            blocks.append(np.eye(6))
    return blocks


def pad_full_noise(R_block: NDArray, pad: float = 1.0) -> NDArray:
    """Extend a 6x6 reduced covariance to 8x8 with ``pad`` on the two scalar diagonals."""
    R8 = np.zeros((8, 8))
    keep = [1, 2, 3, 5, 6, 7]
    R8[np.ix_(keep, keep)] = R_block
    R8[0, 0] = R8[4, 4] = pad
    return R8


def full_residual(z: NDArray) -> NDArray:
    """8-row-per-block residual with zero scalar entries."""
    blocks = z.reshape(-1, 6)
    return np.concatenate([np.concatenate(([0.0], b[:3], [0.0], b[3:])) for b in blocks])


def info_quantities(z: NDArray, H_reduced: NDArray, H_full: NDArray, R_blocks: Sequence[NDArray], pad: float = 1.0) -> tuple[NDArray, NDArray, NDArray]:
    """
    Information vector and matrices of a stacked measurement.

    Returns
    -------
    u : ndarray
        ``H̄ᵀ R̄⁻¹ z``.
    U_reduced : ndarray
        ``H̄ᵀ R̄⁻¹ H̄``.
    U_full : ndarray
        ``Hᵀ R⁻¹ H`` with each ``R`` block padded to 8x8.

    Raises
    ------
    FilterError
        If a noise block is singular.
    """
    R_bar = block_diag(*R_blocks)
    u, U_reduced = mekf_single.information(H_reduced, R_bar, z)
    R_full = block_diag(*[pad_full_noise(R, pad) for R in R_blocks])
    _, U_full = mekf_single.information(H_full, R_full, full_residual(z))
    return u, U_reduced, U_full


def measurement_update(state: LocalFilterState, u: NDArray, U_reduced: NDArray) -> LocalFilterState:
    """
    Apply ``Δx = M u`` with ``M = (P⁻¹ + Ū)⁻¹`` to every tracked node.

    Raises
    ------
    DivergenceError
        If a tracked node's attitude correction leaves the unit ball.
    FilterError
        If ``P⁻¹ + Ū`` is singular.
    """
    M = mekf_single.fuse_information(state.covariance, U_reduced)
    delta_x = M @ u
    poses, biases = [], []
    for index, (pose, bias) in enumerate(zip(state.poses, state.biases)):
        block = delta_x[REDUCED_BLOCK * index:REDUCED_BLOCK * (index + 1)]
        poses.append(mekf_single.apply_pose_correction(pose, block[:6]))
        biases.append(bias + block[6:])
    return replace(state, poses=tuple(poses), biases=tuple(biases), covariance=mekf_single.symmetrize(M))


def make_packet(state: LocalFilterState, u: NDArray, U_reduced: NDArray, U_full: NDArray) -> InfoPacket:
    return InfoPacket(sender=state.owner, u=u, U_reduced=U_reduced, U_full=U_full, poses=state.poses, biases=state.biases)

