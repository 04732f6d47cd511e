import numpy as np
import pytest
from scipy.linalg import block_diag

from conftest import central_difference, make_pose
from estimation import ddq_mekf, mekf_single
from estimation.ddq_mekf import MeasurementSet, RELATIVE_SCALE
from estimation.dq_algebra import CONJ_MATRIX, IDENTITY_POSE, dq_mul, extend_to_r8, pose_from_parts
from estimation.exceptions import FilterError
from estimation.fleet_graph import FleetGraph, neighbourhood
from estimation.mekf_single import SensorScenario
from estimation.rigid_body import propagate_pose
from simulation.noise import measure_absolute_pose, measure_velocity, noise_from_snr

P0 = block_diag(1e-1 * np.eye(6), 1e-2 * np.eye(6))


def local_state(graph, owner, poses):
    return ddq_mekf.initial_local_state(graph, owner, poses, {m: np.zeros(6) for m in graph.nodes}, P0)


def exact_measurements(graph, owner, poses, absolute=True):
    relative = {k: ddq_mekf.predicted_relative(poses[owner], poses[k]) for k in graph.neighbours(owner)}
    return MeasurementSet(absolute=poses[owner] if absolute else None, relative=relative)


def relative_error(pose_i, pose_k, true_i, true_k):
    """Residual of the estimates ``pose_i``, ``pose_k`` against exact measurements of the true poses."""
    return ddq_mekf.relative_residual(pose_i, pose_k, *ddq_mekf.predicted_relative(true_i, true_k))


class TestRelativeJacobians:
    def test_identity_poses(self):
        jac = ddq_mekf.jacobian_relative_pose(IDENTITY_POSE, IDENTITY_POSE)
        assert np.allclose(jac.q_dqk, np.eye(4))
        assert np.allclose(jac.q_dqi, CONJ_MATRIX)
        assert np.allclose(jac.r_dpi, -2.0 * np.eye(4))

    def test_observer_block_matches_finite_differences(self, rng, fleet_poses):
        pose_i, pose_k = fleet_poses[1], fleet_poses[2]
        numeric = central_difference(lambda d: relative_error(pose_i, pose_k, dq_mul(pose_i, extend_to_r8(d)), pose_k), np.zeros(6))
        assert np.allclose(ddq_mekf.jacobian_relative_pose(pose_i, pose_k).observer_block(), numeric, atol=1e-6)

    def test_target_block_matches_finite_differences(self, rng, fleet_poses):
        pose_i, pose_k = fleet_poses[3], fleet_poses[5]
        numeric = central_difference(lambda d: relative_error(pose_i, pose_k, pose_i, dq_mul(pose_k, extend_to_r8(d))), np.zeros(6))
        assert np.allclose(ddq_mekf.jacobian_relative_pose(pose_i, pose_k).target_block(), numeric, atol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_blocks_match_finite_differences_for_random_pairs(self, seed):
        rng = np.random.default_rng(seed)
        pose_i, pose_k = make_pose(rng), make_pose(rng)
        jac = ddq_mekf.jacobian_relative_pose(pose_i, pose_k)
        observer = central_difference(lambda d: relative_error(pose_i, pose_k, dq_mul(pose_i, extend_to_r8(d)), pose_k), np.zeros(6))
        target = central_difference(lambda d: relative_error(pose_i, pose_k, pose_i, dq_mul(pose_k, extend_to_r8(d))), np.zeros(6))
        assert np.allclose(jac.observer_block(), observer, atol=1e-5)
        assert np.allclose(jac.target_block(), target, atol=1e-5)

    def test_half_turn_keeps_attitude_rows_conditioned(self):
        pose_i = IDENTITY_POSE
        pose_k = pose_from_parts(np.array([0.0, 0.0, 0.0, 1.0]), np.array([5.0, 0.0, 0.0]))
        jac = ddq_mekf.jacobian_relative_pose(pose_i, pose_k)
        assert np.allclose(jac.target_block()[:3, :3], 0.5 * np.eye(3))
        assert np.allclose(np.linalg.svd(jac.observer_block()[:3, :3], compute_uv=False), 0.5)

    def test_half_turn_update_recovers_offset(self):
        # Observer known exactly; the target starts 0.3 rad off, a half turn away
        graph = FleetGraph.from_edges(2, [(1, 2)])
        truth = {1: IDENTITY_POSE, 2: pose_from_parts(np.array([0.0, 0.0, 0.0, 1.0]), np.array([5.0, 0.0, 0.0]))}
        offset = np.array([0.15, -0.1, 0.05, 0.0, 0.0, 0.0])
        estimates = {1: truth[1], 2: dq_mul(truth[2], extend_to_r8(offset))}
        R = noise_from_snr(1000.0).R
        state = local_state(graph, 1, estimates)
        z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(graph, 1, truth))
        u, U, _ = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(state.order, R, R))
        after = ddq_mekf.measurement_update(state, u, U)
        error = mekf_single.pose_residual(after.pose_of(2), truth[2])
        assert np.linalg.norm(error[:3]) < 0.05

    def test_prediction_is_body_frame_offset(self, fleet_poses):
        from estimation.dq_algebra import conj, inertial_position, rotate

        q, r = ddq_mekf.predicted_relative(fleet_poses[1], fleet_poses[4])
        expected = rotate(conj(fleet_poses[1][:4]), inertial_position(fleet_poses[4]) - inertial_position(fleet_poses[1]))
        assert np.allclose(r, expected)
        assert q[0] ** 2 + q[1:] @ q[1:] == pytest.approx(1.0)


class TestMeasurementAssembly:
    def test_shapes_and_zero_residual(self, fleet, fleet_poses):
        state = local_state(fleet, 3, fleet_poses)
        z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 3, fleet_poses))
        assert z.shape == (24,)
        assert H.shape == (24, 48)
        assert H_full.shape == (32, 56)
        assert np.allclose(z, 0.0, atol=1e-12)

    def test_rows_follow_neighbourhood(self, fleet, fleet_poses):
        state = local_state(fleet, 1, fleet_poses)
        _, H, _ = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 1, fleet_poses))
        # Own absolute row sits at node 1's column, bias columns untouched
        assert np.allclose(H[0:6, 0:6], np.eye(6))
        assert np.allclose(H[:, 6:12], 0.0)
        jac = ddq_mekf.jacobian_relative_pose(fleet_poses[1], fleet_poses[2])
        assert np.allclose(H[6:12, 12:18], jac.target_block())
        assert np.allclose(H[6:12, 0:6], jac.observer_block())
        assert np.allclose(H[6:12, 24:30], 0.0)

    def test_missing_inputs(self, fleet, fleet_poses):
        state = local_state(fleet, 1, fleet_poses)
        with pytest.raises(FilterError):
            ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 1, fleet_poses, absolute=False))
        with pytest.raises(FilterError):
            ddq_mekf.assemble_measurement(state, MeasurementSet(absolute=fleet_poses[1], relative={}))

    def test_reindexing_for_node_one(self, fleet, fleet_poses):
        sender = local_state(fleet, 4, fleet_poses)
        rows = ddq_mekf.measurement_rows(sender, exact_measurements(fleet, 4, fleet_poses))
        layout = neighbourhood(fleet, 1)
        _, H, _ = ddq_mekf.place_rows(rows, layout, layout.members)
        jac = ddq_mekf.jacobian_relative_pose(fleet_poses[4], fleet_poses[1])
        assert H.shape == (18, 36)
        assert np.allclose(H[0:6, 0:6], jac.target_block())
        assert np.allclose(H[0:6, 24:30], jac.observer_block())
        assert np.allclose(H[6:12], 0.0)
        assert np.allclose(H[12:18, 24:30], np.eye(6))

    def test_reindexing_for_node_three(self, fleet, fleet_poses):
        sender = local_state(fleet, 4, fleet_poses)
        rows = ddq_mekf.measurement_rows(sender, exact_measurements(fleet, 4, fleet_poses))
        layout = neighbourhood(fleet, 3)
        _, H, H_full = ddq_mekf.place_rows(rows, layout, layout.members)
        assert H.shape == (24, 48)
        assert H_full.shape == (32, 56)
        assert np.allclose(H[0:6], 0.0)
        assert np.allclose(H[18:24], 0.0)
        jac = ddq_mekf.jacobian_relative_pose(fleet_poses[4], fleet_poses[3])
        assert np.allclose(H[6:12, 12:18], jac.target_block())
        assert np.allclose(H[6:12, 24:30], jac.observer_block())
        assert np.allclose(H[12:18, 24:30], np.eye(6))

    def test_own_layout_of_node_four(self, fleet, fleet_poses):
        state = local_state(fleet, 4, fleet_poses)
        _, H, _ = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 4, fleet_poses))
        assert H.shape == (18, 36)
        assert np.allclose(H[12:18, 24:30], np.eye(6))
        assert not np.allclose(H[0:6, 0:6], 0.0)
        assert not np.allclose(H[6:12, 12:18], 0.0)

    def test_noise_blocks(self, fleet):
        R = np.diag([1e-6] * 3 + [1e-4] * 3)
        order = neighbourhood(fleet, 4)
        blocks = ddq_mekf.measurement_noise(order, R, R, row_members=neighbourhood(fleet, 3).members)
        assert np.allclose(blocks[0], np.eye(6))
        assert np.allclose(blocks[1], RELATIVE_SCALE @ R @ RELATIVE_SCALE)
        assert np.allclose(blocks[2], R)

    def test_full_noise_padding(self):
        R8 = ddq_mekf.pad_full_noise(np.diag(np.arange(1.0, 7.0)), pad=5.0)
        assert np.allclose(np.diag(R8), [5, 1, 2, 3, 5, 4, 5, 6])

    def test_padding_leaves_reduced_information(self, fleet, fleet_poses, rng):
        R = noise_from_snr(100.0).R
        estimates = {m: dq_mul(fleet_poses[m], extend_to_r8(0.01 * rng.standard_normal(6))) for m in fleet.nodes}
        state = local_state(fleet, 3, estimates)
        z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 3, fleet_poses))
        R_blocks = ddq_mekf.measurement_noise(state.order, R, R)
        u_one, U_one, _ = ddq_mekf.info_quantities(z, H, H_full, R_blocks, pad=1.0)
        u_seven, U_seven, _ = ddq_mekf.info_quantities(z, H, H_full, R_blocks, pad=7.0)
        assert np.array_equal(U_one, U_seven)
        assert np.array_equal(u_one, u_seven)


class TestFilterSteps:
    def test_single_node_matches_single_filter(self, rng, random_pose):
        graph = FleetGraph.from_edges(1, [])
        model = noise_from_snr(100.0)
        noise = model.noise_config()
        bias = 0.01 * rng.standard_normal(6)
        w_m = 0.1 * rng.standard_normal(6)
        measured = dq_mul(random_pose, extend_to_r8(np.array([0.01, -0.02, 0.005, 0.1, 0.0, -0.05])))

        local = ddq_mekf.initial_local_state(graph, 1, {1: random_pose}, {1: bias}, P0)
        local = ddq_mekf.time_update(local, ddq_mekf.estimate_velocity(w_m, local.biases), noise, 0.05)
        z, H, H_full = ddq_mekf.assemble_measurement(local, MeasurementSet(absolute=measured))
        u, U, _ = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(local.order, noise.R, noise.R))
        local = ddq_mekf.measurement_update(local, u, U)

        single = mekf_single.initial_state(random_pose, P0, dual_bias=bias)
        single = mekf_single.time_update(single, SensorScenario.POSE_AND_VELOCITY, noise, 0.05, w_m)
        single = mekf_single.measurement_update(single, noise, measured)

        assert np.allclose(local.own_pose, single.pose)
        assert np.allclose(local.own_bias, single.dual_bias)
        assert np.allclose(local.covariance, single.covariance)

    def test_single_node_tracks_single_filter_over_long_run(self, rng, random_pose):
        graph = FleetGraph.from_edges(1, [])
        model = noise_from_snr(100.0)
        noise = model.noise_config()
        dt = 0.05
        w_true = np.array([0.02, -0.01, 0.03, 0.1, 0.0, -0.05])
        truth = random_pose
        start = dq_mul(truth, extend_to_r8(np.array([0.05, -0.02, 0.01, 0.3, -0.1, 0.2])))

        local = ddq_mekf.initial_local_state(graph, 1, {1: start}, {1: np.zeros(6)}, P0)
        single = mekf_single.initial_state(start, P0)
        for _ in range(1200):
            w_m = measure_velocity(w_true, np.zeros(6), model, rng)
            truth = propagate_pose(truth, w_true, dt)
            measured = measure_absolute_pose(truth, model, rng)

            local = ddq_mekf.time_update(local, ddq_mekf.estimate_velocity(w_m, local.biases), noise, dt)
            z, H, H_full = ddq_mekf.assemble_measurement(local, MeasurementSet(absolute=measured))
            u, U, _ = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(local.order, noise.R, noise.R))
            local = ddq_mekf.measurement_update(local, u, U)

            single = mekf_single.time_update(single, SensorScenario.POSE_AND_VELOCITY, noise, dt, w_m)
            single = mekf_single.measurement_update(single, noise, measured)

            assert np.allclose(local.own_pose, single.pose, rtol=0.0, atol=1e-12)
            assert np.allclose(local.own_bias, single.dual_bias, rtol=0.0, atol=1e-12)
            assert np.allclose(local.covariance, single.covariance, rtol=0.0, atol=1e-12)

    def test_relabelling_permutes_updates(self, fleet, fleet_poses, rng):
        mapping = {1: 3, 2: 5, 3: 1, 4: 2, 5: 4}
        relabelled = fleet.relabel(mapping)
        R = noise_from_snr(100.0).R
        estimates = {m: dq_mul(fleet_poses[m], extend_to_r8(0.01 * rng.standard_normal(6))) for m in fleet.nodes}

        def updated(graph, owner, poses, truth):
            state = local_state(graph, owner, poses)
            z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(graph, owner, truth))
            u, U, _ = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(state.order, R, R))
            return ddq_mekf.measurement_update(state, u, U)

        for owner in fleet.nodes:
            original = updated(fleet, owner, estimates, fleet_poses)
            moved = updated(
                relabelled,
                mapping[owner],
                {mapping[m]: p for m, p in estimates.items()},
                {mapping[m]: p for m, p in fleet_poses.items()},
            )
            for m in original.order.members:
                assert np.allclose(original.pose_of(m), moved.pose_of(mapping[m]), atol=1e-10)
                a, b = original.index(m), moved.index(mapping[m])
                block_a = original.covariance[12 * a:12 * a + 12, 12 * a:12 * a + 12]
                block_b = moved.covariance[12 * b:12 * b + 12, 12 * b:12 * b + 12]
                assert np.allclose(block_a, block_b, atol=1e-12)

    def test_velocity_stacking(self, fleet):
        order = neighbourhood(fleet, 1)
        stacked = ddq_mekf.stack_velocity(np.full(6, 1.0), {2: np.full(6, 2.0), 4: np.full(6, 4.0)}, order)
        assert np.allclose(stacked.reshape(3, 6)[:, 0], [1.0, 2.0, 4.0])
        with pytest.raises(FilterError):
            ddq_mekf.stack_velocity(np.zeros(6), {2: np.zeros(6)}, order)

    def test_time_update_is_block_diagonal(self, fleet, fleet_poses):
        state = local_state(fleet, 3, fleet_poses)
        w_est = 0.05 * np.ones(24)
        after = ddq_mekf.time_update(state, w_est, noise_from_snr(1000.0).noise_config(), 0.05)
        assert np.allclose(after.covariance[:12, 12:], 0.0)
        with pytest.raises(FilterError):
            ddq_mekf.time_update(state, np.zeros(18), noise_from_snr(1000.0).noise_config(), 0.05)

    def test_exact_measurements_leave_estimates(self, fleet, fleet_poses):
        R = noise_from_snr(1000.0).R
        state = local_state(fleet, 3, fleet_poses)
        z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 3, fleet_poses))
        u, U, U_full = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(state.order, R, R))
        after = ddq_mekf.measurement_update(state, u, U)
        for before_pose, after_pose in zip(state.poses, after.poses):
            assert np.allclose(before_pose, after_pose)
        assert U_full.shape == (56, 56)
        assert np.allclose(U_full, U_full.T)
        assert np.trace(after.covariance) < np.trace(state.covariance)

    def test_packet_carries_information_and_estimates(self, fleet, fleet_poses):
        R = noise_from_snr(1000.0).R
        state = local_state(fleet, 4, fleet_poses)
        z, H, H_full = ddq_mekf.assemble_measurement(state, exact_measurements(fleet, 4, fleet_poses))
        u, U, U_full = ddq_mekf.info_quantities(z, H, H_full, ddq_mekf.measurement_noise(state.order, R, R))
        packet = ddq_mekf.make_packet(state, u, U, U_full)
        assert packet.sender == 4
        assert packet.U_reduced.shape == (36, 36)
        assert packet.U_full.shape == (42, 42)
        assert len(packet.poses) == len(packet.biases) == 3
