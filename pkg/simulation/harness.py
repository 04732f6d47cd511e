"""
Scenario drivers: truth propagation, sensor synthesis and the filter phases of every round.

A run is fully determined by ``(config, RunSpec)``. Truth, measurement and initialisation
noise come from separate generators seeded with ``[seed, stream]``, and every measurement is
drawn in every mode, so runs that differ only in mode see identical sensor realisations.

Round order (``t_k -> t_k+1``):

1. truth and filters propagate with the velocity measured at ``t_k`` (exchanged between
   neighbours first when velocities are sensed)
2. truth biases take a random-walk step
3. absolute (all satellites) and relative (every directed edge) measurements at ``t_k+1``
4. followers synthesise their absolute pose
5. measurement update: local, or hard consensus (prepare, exchange, aggregate)
6. soft consensus (stubborn leaders keep their own estimates)
7. velocity measurement at ``t_k+1``
8. truth and own estimates are logged
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from estimation import consensus, ddq_mekf, mekf_single
from estimation.ddq_mekf import MeasurementSet
from estimation.dq_algebra import inertial_position, pose_from_parts, random_unit_quaternion
from estimation.exceptions import DivergenceError
from estimation.fleet_graph import (
    FleetGraph,
    RoundBus,
    broadcast,
    choose_leaders,
    exchange,
    neighbourhood,
    random_connected_graph,
    read_edge_list,
)
from estimation.logger import get_logger
from estimation.mekf_single import SensorScenario
from estimation.rigid_body import RigidBodyParams, RigidBodyState, integrate_step, propagate_pose
from simulation import control
from simulation.config import ScenarioConfig, thread_count
from simulation.metrics import TRAJECTORY_COLUMNS
from simulation.noise import (
    SILENT,
    NoiseModel,
    measure_absolute_pose,
    measure_relative,
    measure_velocity,
    perturb_estimate,
    scenario_noise,
    walk_bias,
)

# Set logger
logger = get_logger(__name__)

TRUTH_STREAM, MEASUREMENT_STREAM, INIT_STREAM, GRAPH_STREAM, LEADER_STREAM = range(5)


@dataclass(frozen=True)
class RunSpec:
    """One Monte-Carlo run of a batch."""

    scenario: str
    mode: str
    snr: float
    seed: int
    leader_fraction: float = 1.0
    stubborn: bool = False

    @property
    def label(self) -> str:
        return "stubborn" if self.stubborn else self.mode

    @property
    def file_name(self) -> str:
        name = f"run_{self.label}_snr{self.snr:g}_seed{self.seed}"
        if self.scenario == "leaders":
            name += f"_lf{self.leader_fraction:g}"
        return name + ".csv"


@dataclass(frozen=True)
class RunResult:
    spec: RunSpec
    truth: pd.DataFrame
    estimate: pd.DataFrame
    nees: pd.DataFrame = field(default_factory=pd.DataFrame)
    diverged: bool = False
    message: str = ""
    clamp_events: int = 0


def plan_runs(config: ScenarioConfig) -> list[RunSpec]:
    """Expand a configuration into its runs, seeds innermost."""
    specs = []
    if config.scenario == "sweep":
        modes = [config.mode]
        if config.baseline and config.mode != "single":
            modes.append("single")
        for snr in config.snr_values:
            for mode in modes:
                for seed in config.seeds:
                    specs.append(RunSpec("sweep", mode, snr, seed, config.leader_fraction, config.stubborn and mode != "single"))
    elif config.scenario == "leaders":
        for fraction in config.leader_fractions:
            for seed in config.seeds:
                specs.append(RunSpec("leaders", config.mode, config.snr, seed, fraction, config.stubborn))
    elif config.scenario == "asteroid":
        for seed in config.seeds:
            specs.append(RunSpec("asteroid", config.mode, config.snr, seed, config.leader_fraction, config.stubborn))
    else:
        for seed in config.seeds:
            specs.append(RunSpec("single", "single", config.snr, seed))
    return specs


def build_graph(config: ScenarioConfig, seed: int, n_sats: int) -> FleetGraph:
    """Edge-list file if configured, else a connected random draw; a lone satellite has no edges."""
    if config.edge_list:
        return read_edge_list(config.edge_list)
    if n_sats == 1:
        return FleetGraph.from_edges(1, [])
    return random_connected_graph(n_sats, config.edge_probability, [seed, GRAPH_STREAM])


def _trajectory_row(round_index: int, t: float, sat: int, pose: NDArray, w: NDArray) -> list:
    return [round_index, t, sat, *pose[:4], *inertial_position(pose), *w]


class FleetRun:
    """Mutable state of one run: truth, filters and the generators that drive them."""

    def __init__(self, config: ScenarioConfig, spec: RunSpec):
        self.config = config
        self.spec = spec
        self.dt = config.dt
        self.sensing = SensorScenario(config.sensing)
        self.rng_truth = np.random.default_rng([spec.seed, TRUTH_STREAM])
        self.rng_meas = np.random.default_rng([spec.seed, MEASUREMENT_STREAM])
        self.rng_init = np.random.default_rng([spec.seed, INIT_STREAM])

        self.model = scenario_noise(config, spec.snr)
        self.synth = SILENT if config.noiseless else self.model
        self.filter_noise = self.model.noise_config()
        self.P0 = NoiseModel.initial_covariance()

        n_sats = 1 if spec.scenario == "single" else config.n_sats
        self.graph = build_graph(config, spec.seed, n_sats)
        self.nodes = self.graph.nodes
        self.orders = {i: neighbourhood(self.graph, i) for i in self.nodes}
        if spec.mode == "single":
            self.leaders = frozenset(self.nodes)
        else:
            self.leaders = choose_leaders(self.graph, spec.leader_fraction, np.random.default_rng([spec.seed, LEADER_STREAM])).leaders

        self.params = RigidBodyParams(mass=config.mass, inertia=np.diag(config.inertia))
        self._init_truth()
        self._init_filters()
        self.w_meas = {i: self._measure_velocity(i) for i in self.nodes}
        self.clamp_events = 0

    ## Initialisation ##

    def _init_truth(self):
        self.poses, self.velocities = {}, {}
        self.biases = {i: np.zeros(6) for i in self.nodes}
        if self.spec.scenario == "asteroid":
            starts = control.grid_start_positions(len(self.nodes), self.config.start_plane, self.config.grid_spacing)
            self.targets = control.fibonacci_lattice(len(self.nodes), self.config.lattice_radius)
            self.gain = control.lqr_gain(self.config.lqr_q, self.config.lqr_r)
            for index, i in enumerate(self.nodes):
                self.poses[i] = pose_from_parts(control.pointing_attitude(starts[index], np.zeros(3)), starts[index])
                self.velocities[i] = np.zeros(6)
            return
        for i in self.nodes:
            q = random_unit_quaternion(self.rng_truth)
            r = self.config.position_scale * self.rng_truth.standard_normal(3)
            self.poses[i] = pose_from_parts(q, r)
            self.velocities[i] = np.concatenate((
                self.config.omega_scale * self.rng_truth.standard_normal(3),
                self.config.velocity_scale * self.rng_truth.standard_normal(3),
            ))

    def true_filter_bias(self, i: int) -> NDArray:
        # Without a velocity sensor the bias states carry -w
        if self.sensing is SensorScenario.POSE_ONLY:
            return -self.velocities[i]
        return self.biases[i]

    def _initial_estimate(self, m: int) -> tuple[NDArray, NDArray]:
        if self.config.exact_init:
            return self.poses[m].copy(), self.true_filter_bias(m).copy()
        return perturb_estimate(self.poses[m], self.true_filter_bias(m), self.P0, self.rng_init)

    def _init_filters(self):
        self.filters = {}
        for i in self.nodes:
            if self.spec.mode == "single":
                pose, bias = self._initial_estimate(i)
                self.filters[i] = mekf_single.initial_state(pose, self.P0, dual_bias=bias)
                continue
            estimates = {m: self._initial_estimate(m) for m in self.orders[i].members}
            self.filters[i] = ddq_mekf.initial_local_state(
                self.graph,
                i,
                {m: e[0] for m, e in estimates.items()},
                {m: e[1] for m, e in estimates.items()},
                self.P0,
            )

    ## Per-satellite views ##

    def _measure_velocity(self, i: int) -> NDArray:
        return measure_velocity(self.velocities[i], self.biases[i], self.synth, self.rng_meas)

    def own_estimate(self, i: int) -> tuple[NDArray, NDArray]:
        """Own pose and own dual velocity estimate of satellite ``i``."""
        state = self.filters[i]
        if self.spec.mode == "single":
            return state.pose, mekf_single.estimated_velocity(state, self.sensing, self.w_meas[i])
        bias = state.own_bias
        if self.sensing is SensorScenario.POSE_ONLY:
            return state.own_pose, -bias
        return state.own_pose, self.w_meas[i] - bias

    ## Phases ##

    def propagate(self):
        forces = {}
        if self.spec.scenario == "asteroid":
            for index, i in enumerate(self.nodes):
                pose_est, w_est = self.own_estimate(i)
                target = pose_from_parts(control.pointing_attitude(inertial_position(pose_est), np.zeros(3)), self.targets[index])
                forces[i] = control.lqr_track(pose_est, w_est, target, self.params, self.gain)

        if self.spec.mode == "single":
            for i in self.nodes:
                self.filters[i] = mekf_single.time_update(self.filters[i], self.sensing, self.filter_noise, self.dt, self.w_meas[i])
        else:
            received = {}
            if self.sensing is SensorScenario.POSE_AND_VELOCITY:
                received = exchange(RoundBus(self.graph), broadcast(self.graph, self.w_meas))
            for i in self.nodes:
                state = self.filters[i]
                if self.sensing is SensorScenario.POSE_ONLY:
                    w_est = -np.concatenate(state.biases)
                else:
                    stacked = ddq_mekf.stack_velocity(self.w_meas[i], received[i], state.order)
                    w_est = ddq_mekf.estimate_velocity(stacked, state.biases)
                self.filters[i] = ddq_mekf.time_update(state, w_est, self.filter_noise, self.dt)

        for i in self.nodes:
            if i in forces:
                body = integrate_step(RigidBodyState(self.poses[i], self.velocities[i]), self.params, forces[i], self.dt)
                self.poses[i], self.velocities[i] = body.pose, body.velocity
            else:
                self.poses[i] = propagate_pose(self.poses[i], self.velocities[i], self.dt)
            self.biases[i] = walk_bias(self.biases[i], self.synth, self.dt, self.rng_truth)

    def measure(self) -> tuple[dict, dict]:
        absolute = {i: measure_absolute_pose(self.poses[i], self.synth, self.rng_meas) for i in self.nodes}
        relative = {
            (i, k): measure_relative(self.poses[i], self.poses[k], self.synth, self.rng_meas)
            for i in self.nodes
            for k in self.graph.neighbours(i)
        }
        return absolute, relative

    def measurement_sets(self, absolute: dict, relative: dict) -> dict[int, MeasurementSet]:
        sets = {}
        for i in self.nodes:
            meas = MeasurementSet(
                absolute=absolute[i] if i in self.leaders else None,
                relative={k: relative[(i, k)] for k in self.graph.neighbours(i)},
            )
            if i not in self.leaders:
                meas = replace(meas, absolute=consensus.synthesize_absolute_pose(self.filters[i], meas))
            sets[i] = meas
        return sets

    def update(self, absolute: dict, relative: dict):
        R = self.filter_noise.R
        if self.spec.mode == "single":
            for i in self.nodes:
                self.filters[i] = mekf_single.measurement_update(self.filters[i], self.filter_noise, absolute[i])
            return

        meas = self.measurement_sets(absolute, relative)
        if self.spec.mode == "hardsoft":
            outgoing = {
                i: {k: consensus.hard_prepare(self.filters[i], meas[i], self.orders[k], R, R) for k in self.graph.neighbours(i)}
                for i in self.nodes
            }
            own = {i: consensus.hard_prepare(self.filters[i], meas[i], self.orders[i], R, R) for i in self.nodes}
            received = exchange(RoundBus(self.graph), outgoing)
            for i in self.nodes:
                packets = {**received[i], i: own[i]}
                self.filters[i] = consensus.hard_aggregate_update(self.filters[i], packets, self.spec.stubborn, i in self.leaders)
            return

        for i in self.nodes:
            state = self.filters[i]
            z, H, H_full = ddq_mekf.assemble_measurement(state, meas[i])
            R_blocks = ddq_mekf.measurement_noise(state.order, R, R)
            u, U_reduced, _ = ddq_mekf.info_quantities(z, H, H_full, R_blocks)
            self.filters[i] = ddq_mekf.measurement_update(state, u, U_reduced)

    def soft_consensus(self):
        outgoing = {
            i: {k: consensus.make_snapshot(self.filters[i], self.orders[k]) for k in self.graph.neighbours(i)}
            for i in self.nodes
        }
        received = exchange(RoundBus(self.graph), outgoing)
        for i in self.nodes:
            weights = consensus.ConsensusWeights.for_node(self.orders[i], self.spec.stubborn, i in self.leaders)
            self.filters[i], clamps = consensus.soft_consensus_step(self.filters[i], received[i], weights)
            self.clamp_events += clamps

    def check_finite(self, round_index: int):
        for i in self.nodes:
            pose, w = self.own_estimate(i)
            if not (np.all(np.isfinite(pose)) and np.all(np.isfinite(w))):
                raise DivergenceError(f"Estimate of satellite {i} is not finite at round {round_index}.")

    def step(self, round_index: int):
        self.propagate()
        absolute, relative = self.measure()
        self.update(absolute, relative)
        if self.spec.mode in ("soft", "hardsoft"):
            self.soft_consensus()
        self.w_meas = {i: self._measure_velocity(i) for i in self.nodes}
        self.check_finite(round_index)


def run_scenario(config: ScenarioConfig, spec: RunSpec) -> RunResult:
    """
    Simulate one run and collect truth and own-estimate trajectories.

    Parameters
    ----------
    config : ScenarioConfig
    spec : RunSpec

    Returns
    -------
    RunResult
        Trajectories with columns ``TRAJECTORY_COLUMNS``, one row per satellite and round.
        Filter divergence ends the run early and is recorded rather than raised.
    """
    logger.info(f"Run {spec.scenario}/{spec.label} snr={spec.snr:g} seed={spec.seed} lf={spec.leader_fraction:g}")
    run = FleetRun(config, spec)
    truth_rows, estimate_rows, nees_rows = [], [], []
    diverged, message = False, ""

    for k in range(config.n_steps):
        round_index = k + 1
        t = round_index * run.dt
        try:
            run.step(round_index)
        except DivergenceError as e:
            diverged, message = True, f"{e}"
            logger.warning(f"Run diverged at round {round_index}: {e}")
            break
        for i in run.nodes:
            pose_est, w_est = run.own_estimate(i)
            truth_rows.append(_trajectory_row(round_index, t, i, run.poses[i], run.velocities[i]))
            estimate_rows.append(_trajectory_row(round_index, t, i, pose_est, w_est))
            if spec.mode == "single":
                nees = mekf_single.normalized_error_squared(run.filters[i], run.poses[i], run.true_filter_bias(i))
                nees_rows.append([round_index, i, nees])
        if round_index % int(max(1, round(config.rate))) == 0:
            logger.debug(f"t={t:.2f}s done")

    return RunResult(
        spec=spec,
        truth=pd.DataFrame(truth_rows, columns=TRAJECTORY_COLUMNS),
        estimate=pd.DataFrame(estimate_rows, columns=TRAJECTORY_COLUMNS),
        nees=pd.DataFrame(nees_rows, columns=["round", "sat", "nees"]),
        diverged=diverged,
        message=message,
        clamp_events=run.clamp_events,
    )


def run_batch(config: ScenarioConfig) -> list[RunResult]:
    """
    Run every planned run, in parallel when ``DQFLEET_THREADS`` > 1.

    Results come back in plan order whatever the worker count.
    """
    specs = plan_runs(config)
    workers = min(thread_count(), len(specs))
    logger.info(f"Starting {len(specs)} runs of scenario {config.scenario} on {workers} worker(s)")
    if workers <= 1:
        return [run_scenario(config, spec) for spec in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(run_scenario, config), specs))
