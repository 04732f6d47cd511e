"""
Consensus between neighbouring filters and the leader-follower machinery.

Soft consensus nudges shared pose and bias estimates towards the neighbours' values after
the measurement update. Hard consensus re-indexes every neighbour's measurement information
into the receiver's layout and fuses it before the update. Followers, lacking an absolute
sensor, synthesise their absolute pose from neighbour estimates and relative measurements.
"""

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from estimation import ddq_mekf
from estimation.ddq_mekf import LocalFilterState, MeasurementSet
from estimation.dq_algebra import (
    canonical,
    conj,
    inertial_position,
    normalize_quat,
    pose_from_parts,
    quat_average,
    quat_mul,
    quat_scale_error,
    rotate,
)
from estimation.exceptions import FilterError, GraphError, InvariantError
from estimation.fleet_graph import Neighbourhood
from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)


@dataclass(frozen=True)
class ConsensusWeights:
    mu_q: float
    mu_r: float
    mu_b: float

    def __post_init__(self):
        if min(self.mu_q, self.mu_r, self.mu_b) < 0.0:
            raise InvariantError("Consensus weights must be nonnegative.")
        if self.mu_q > 1.0:
            raise InvariantError(f"Attitude consensus weight {self.mu_q} exceeds 1.")

    @classmethod
    def uniform(cls, order: Neighbourhood) -> "ConsensusWeights":
        mu = 1.0 / len(order)
        return cls(mu_q=mu, mu_r=mu, mu_b=mu)

    @classmethod
    def for_node(cls, order: Neighbourhood, stubborn: bool = False, is_leader: bool = False) -> "ConsensusWeights":
        """Uniform weights, or zero for a stubborn leader so its estimates ignore the neighbours."""
        if stubborn and is_leader:
            return cls(mu_q=0.0, mu_r=0.0, mu_b=0.0)
        return cls.uniform(order)

    @property
    def is_zero(self) -> bool:
        return self.mu_q == self.mu_r == self.mu_b == 0.0


@dataclass(frozen=True)
class ConsensusSnapshot:
    """Estimates of the nodes shared by sender and receiver."""

    sender: int
    poses: Mapping[int, NDArray]
    biases: Mapping[int, NDArray]


@dataclass(frozen=True)
class HardPacket:
    sender: int
    receiver: int
    u: NDArray
    U_reduced: NDArray
    U_full: NDArray


def make_snapshot(state: LocalFilterState, receiver: Neighbourhood) -> ConsensusSnapshot:
    shared = [m for m in state.order.members if m in receiver]
    return ConsensusSnapshot(
        sender=state.owner,
        poses={m: state.pose_of(m) for m in shared},
        biases={m: state.bias_of(m) for m in shared},
    )


## Soft consensus ##

def soft_consensus_step(state: LocalFilterState, snapshots: Mapping[int, ConsensusSnapshot], weights: ConsensusWeights) -> tuple[LocalFilterState, int]:
    """
    One soft consensus exchange for satellite ``i``.

    For every tracked node ``m``, positions and biases move by ``μ Σ_j (x_j,m - x_i,m)`` over the
    neighbours ``j`` that also track ``m``. Attitudes are multiplied on the right by the scaled
    product ``θ = Π_j q̂_i,m* q̂_j,m`` (neighbours ascending), ``quat_scale_error(θ, μ_q)``.
    The dual parts are rebuilt from the updated attitude and position.

    Parameters
    ----------
    state : LocalFilterState
    snapshots : dict
        ``neighbour -> ConsensusSnapshot``; must cover the neighbours of ``i``.
    weights : ConsensusWeights

    Returns
    -------
    state : LocalFilterState
    clamps : int
        Number of attitude entries for which ``μ_q`` was reduced to stay in the scaling domain.

    Raises
    ------
    GraphError
        If a neighbour's snapshot is missing.
    """
    missing = [j for j in state.order.others if j not in snapshots]
    if missing:
        raise GraphError(f"Node {state.owner} misses consensus snapshots from {missing}.")
    if weights.is_zero:
        return state, 0

    clamps = 0
    poses, biases = [], []
    for member, pose, bias in zip(state.order.members, state.poses, state.biases):
        q_own = pose[:4]
        r_own = inertial_position(pose)
        phi_r, phi_b = np.zeros(3), np.zeros(6)
        theta = np.array([1.0, 0.0, 0.0, 0.0])
        for j in sorted(snapshots):
            snapshot = snapshots[j]
            if member not in snapshot.poses:
                continue
            other = snapshot.poses[member]
            phi_r += inertial_position(other) - r_own
            phi_b += snapshot.biases[member] - bias
            theta = quat_mul(theta, quat_mul(conj(q_own), other[:4]))
        theta = canonical(normalize_quat(theta))

        mu_q = weights.mu_q
        spread = np.linalg.norm(theta[1:])
        if mu_q * spread > 1.0:
            mu_q = 1.0 / spread
            clamps += 1
            logger.warning(f"Attitude consensus weight clamped for node {member} at node {state.owner}")
        phi_q = quat_scale_error(theta, mu_q)

        q_new = normalize_quat(quat_mul(q_own, phi_q))
        poses.append(pose_from_parts(q_new, r_own + weights.mu_r * phi_r))
        biases.append(bias + weights.mu_b * phi_b)

    return replace(state, poses=tuple(poses), biases=tuple(biases)), clamps


## Hard consensus ##

def hard_prepare(state: LocalFilterState, meas: MeasurementSet, receiver: Neighbourhood, R_absolute: NDArray, R_relative: NDArray) -> HardPacket:
    """
    Re-index satellite ``i``'s measurement into receiver ``k``'s layout.

    Rows follow ``V_k``: the row of member ``m`` carries ``i``'s row about ``m`` when ``i`` tracks
    ``m`` and is zero otherwise. Columns follow ``V_k``.

    Raises
    ------
    GraphError
        If the receiver is not in ``V_i``.
    """
    if receiver.owner not in state.order:
        raise GraphError(f"Node {receiver.owner} is not a neighbour of node {state.owner}.")
    rows = ddq_mekf.measurement_rows(state, meas)
    z, H, H_full = ddq_mekf.place_rows(rows, receiver, receiver.members)
    R_blocks = ddq_mekf.measurement_noise(state.order, R_absolute, R_relative, row_members=receiver.members)
    u, U_reduced, U_full = ddq_mekf.info_quantities(z, H, H_full, R_blocks)
    return HardPacket(sender=state.owner, receiver=receiver.owner, u=u, U_reduced=U_reduced, U_full=U_full)


def hard_aggregate_update(state: LocalFilterState, packets: Mapping[int, HardPacket], stubborn: bool = False, is_leader: bool = False) -> LocalFilterState:
    """
    Fuse the packets addressed to satellite ``i`` and apply the update.

    ``y = Σ u_j,i`` and ``S̄ = Σ Ū_j,i`` over ``V_i``; a stubborn leader uses its own packet only.

    Raises
    ------
    FilterError
        If a packet from ``V_i`` is missing or ``P⁻¹ + S̄`` is singular.
    """
    senders = [state.owner] if (stubborn and is_leader) else list(state.order.members)
    missing = [j for j in senders if j not in packets]
    if missing:
        raise FilterError(f"Node {state.owner} misses hard consensus packets from {missing}.")
    y = sum(packets[j].u for j in senders)
    S = sum(packets[j].U_reduced for j in senders)
    return ddq_mekf.measurement_update(state, y, S)


## Leader-follower ##

def synthesize_absolute_pose(state: LocalFilterState, meas: MeasurementSet) -> NDArray:
    """
    Absolute pose of a follower from its neighbours' estimates and its relative measurements.

    Each neighbour ``n`` yields ``q = q̂_n q_rel*`` and ``r = r̂_n - q r_rel q*``; positions are
    averaged arithmetically and attitudes with ``quat_average``.

    Raises
    ------
    FilterError
        If the follower has no neighbour measurement to work from.
    """
    neighbours = [n for n in state.order.others if n in meas.relative]
    if not neighbours:
        raise FilterError(f"Follower {state.owner} has no neighbour to synthesize its pose from.")

    attitudes, positions = [], []
    for n in neighbours:
        q_rel, r_rel = meas.relative[n]
        estimate = state.pose_of(n)
        q = quat_mul(estimate[:4], conj(q_rel))
        attitudes.append(q)
        positions.append(inertial_position(estimate) - rotate(q, r_rel))

    q_avg = quat_average(attitudes)
    return pose_from_parts(q_avg, np.mean(positions, axis=0))
