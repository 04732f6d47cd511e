import numpy as np
import pandas as pd
import pytest

from estimation.exceptions import DivergenceError
from simulation import harness
from simulation.config import parse_config
from simulation.harness import RunSpec, plan_runs, run_batch, run_scenario
from simulation.metrics import TRAJECTORY_COLUMNS, compute_metrics
from simulation.noise import ASTEROID_NOISE


def small_config(**overrides):
    values = {"n_sats": 4, "duration": 1.0, "n_runs": 1, "edge_probability": 0.6}
    values.update(overrides)
    return parse_config(overrides=values)


def test_plan_for_sweep_with_baseline():
    config = small_config(snr_values="10,1000", n_runs=2, baseline=True, mode="soft", stubborn=True)
    specs = plan_runs(config)
    assert len(specs) == 8
    assert [s.snr for s in specs[:4]] == [10.0] * 4
    assert {s.label for s in specs} == {"stubborn", "single"}
    assert specs[0].file_name == "run_stubborn_snr10_seed0.csv"


def test_plan_for_leaders():
    specs = plan_runs(small_config(scenario="leaders", leader_fractions="0.25,1", n_runs=2))
    assert [(s.leader_fraction, s.seed) for s in specs] == [(0.25, 0), (0.25, 1), (1.0, 0), (1.0, 1)]
    assert specs[0].file_name.endswith("_lf0.25.csv")


def test_plan_for_single():
    specs = plan_runs(small_config(scenario="single", mode="hardsoft", n_runs=3))
    assert {s.mode for s in specs} == {"single"}
    assert [s.seed for s in specs] == [0, 1, 2]


@pytest.mark.parametrize("mode", ["single", "none", "soft", "hardsoft"])
@pytest.mark.parametrize("sensing", ["velocity", "pose_only"])
def test_noiseless_runs_track_truth(mode, sensing):
    config = small_config(mode=mode, sensing=sensing, noiseless=True, exact_init=True)
    result = run_scenario(config, RunSpec("sweep", mode, 1000.0, 0))
    assert not result.diverged
    metrics = compute_metrics(result.truth, result.estimate)
    assert metrics.errors[["err_att_rad", "err_pos_m", "err_angvel", "err_linvel"]].to_numpy().max() < 1e-8


@pytest.mark.parametrize("fraction", [0.25, 0.5])
@pytest.mark.parametrize("stubborn", [False, True])
def test_noiseless_followers_track_truth(fraction, stubborn):
    config = small_config(scenario="leaders", mode="hardsoft", noiseless=True, exact_init=True)
    result = run_scenario(config, RunSpec("leaders", "hardsoft", 1000.0, 0, fraction, stubborn))
    metrics = compute_metrics(result.truth, result.estimate)
    assert metrics.errors["err_pos_m"].max() < 1e-8
    assert metrics.errors["err_att_rad"].max() < 1e-8


def test_log_shape():
    config = small_config(duration=2.0)
    result = run_scenario(config, RunSpec("sweep", "hardsoft", 1000.0, 0))
    assert list(result.truth.columns) == TRAJECTORY_COLUMNS
    assert len(result.truth) == 4 * 40
    assert sorted(result.truth["sat"].unique()) == [1, 2, 3, 4]
    assert result.truth["t"].iloc[-1] == pytest.approx(2.0)


def test_runs_are_reproducible():
    config = small_config()
    spec = RunSpec("sweep", "hardsoft", 100.0, 3)
    first, second = run_scenario(config, spec), run_scenario(config, spec)
    pd.testing.assert_frame_equal(first.truth, second.truth)
    pd.testing.assert_frame_equal(first.estimate, second.estimate)


def test_modes_share_truth():
    config = small_config()
    soft = run_scenario(config, RunSpec("sweep", "soft", 100.0, 1))
    single = run_scenario(config, RunSpec("sweep", "single", 100.0, 1))
    pd.testing.assert_frame_equal(soft.truth, single.truth)
    assert not soft.estimate.equals(single.estimate)


def test_single_scenario_logs_nees():
    config = small_config(scenario="single")
    result = run_scenario(config, RunSpec("single", "single", 1000.0, 0))
    assert result.truth["sat"].unique().tolist() == [1]
    assert list(result.nees.columns) == ["round", "sat", "nees"]
    assert len(result.nees) == 20
    assert (result.nees["nees"] >= 0).all()


def test_divergence_is_recorded(monkeypatch):
    original = harness.FleetRun.step

    def failing_step(self, round_index):
        if round_index == 3:
            raise DivergenceError("Pose correction left the unit ball.")
        original(self, round_index)

    monkeypatch.setattr(harness.FleetRun, "step", failing_step)
    result = run_scenario(small_config(), RunSpec("sweep", "none", 1000.0, 0))
    assert result.diverged
    assert "unit ball" in result.message
    assert result.truth["round"].max() == 2


def test_parallel_batch_matches_serial(monkeypatch):
    config = small_config(snr_values="100,1000", duration=0.5)
    monkeypatch.setenv("DQFLEET_THREADS", "1")
    serial = run_batch(config)
    monkeypatch.setenv("DQFLEET_THREADS", "2")
    parallel = run_batch(config)
    assert [r.spec for r in serial] == [r.spec for r in parallel]
    for a, b in zip(serial, parallel):
        pd.testing.assert_frame_equal(a.estimate, b.estimate)


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["none", "hardsoft"])
def test_errors_shrink_with_snr(mode):
    config = small_config(duration=10.0, n_runs=2, mode=mode)
    medians = {}
    for snr in (10.0, 1000.0):
        results = [run_scenario(config, RunSpec("sweep", mode, snr, seed)) for seed in config.seeds]
        assert not any(r.diverged for r in results)
        medians[snr] = np.median([compute_metrics(r.truth, r.estimate, 100).quartiles.loc["median", "pos"] for r in results])
    assert medians[1000.0] < medians[10.0]




def default_fleet(**overrides):
    values = {"duration": 1.0, "n_runs": 3}
    values.update(overrides)
    return parse_config(overrides=values)


@pytest.mark.parametrize("mode", ["none", "soft", "hardsoft"])
def test_default_fleet_survives_perturbed_start(mode):
    config = default_fleet(mode=mode)
    assert config.n_sats == 10 and config.snr == 1000.0 and not config.exact_init
    for seed in config.seeds:
        result = run_scenario(config, RunSpec("sweep", mode, config.snr, seed))
        assert not result.diverged, result.message
        assert result.truth["round"].max() == config.n_steps


@pytest.mark.parametrize("mode", ["soft", "hardsoft"])
def test_stubborn_leaders_keep_estimates_through_soft_consensus(mode):
    config = small_config(scenario="leaders", n_sats=5, edge_probability=1.0, exact_init=True)
    run = harness.FleetRun(config, RunSpec("leaders", mode, 1000.0, 0, 0.4, stubborn=True))
    run.propagate()
    run.update(*run.measure())
    before = dict(run.filters)
    run.soft_consensus()

    assert run.leaders
    for i in run.leaders:
        assert run.filters[i] is before[i]
    followers = [i for i in run.nodes if i not in run.leaders]
    assert any(not np.array_equal(run.filters[i].own_pose, before[i].own_pose) for i in followers)


def test_soft_stubborn_differs_from_soft():
    config = small_config(scenario="leaders", n_sats=5, edge_probability=1.0)
    plain = run_scenario(config, RunSpec("leaders", "soft", 1000.0, 0, 0.4))
    stubborn = run_scenario(config, RunSpec("leaders", "soft", 1000.0, 0, 0.4, stubborn=True))
    pd.testing.assert_frame_equal(plain.truth, stubborn.truth)
    assert not plain.estimate.equals(stubborn.estimate)


def test_asteroid_uses_its_noise_settings():
    run = harness.FleetRun(small_config(scenario="asteroid", n_sats=3), RunSpec("asteroid", "hardsoft", 1000.0, 0))
    assert run.model == ASTEROID_NOISE
    explicit = harness.FleetRun(small_config(scenario="asteroid", n_sats=3, std_r=0.1), RunSpec("asteroid", "hardsoft", 1000.0, 0))
    assert explicit.model.std_r == 0.1


def fleet_median(result, window=0):
    return compute_metrics(result.truth, result.estimate, window).quartiles.loc["median"]


@pytest.mark.slow
@pytest.mark.parametrize("snr", [10.0, 1000.0])
def test_cooperation_beats_isolation(snr):
    config = parse_config(overrides={"duration": 20.0, "n_runs": 3, "window": 200})
    better = 0
    for seed in config.seeds:
        cooperative = run_scenario(config, RunSpec("sweep", "hardsoft", snr, seed))
        isolated = run_scenario(config, RunSpec("sweep", "single", snr, seed))
        assert not cooperative.diverged and not isolated.diverged
        ours, theirs = fleet_median(cooperative, config.window), fleet_median(isolated, config.window)
        better += int(ours["att"] < theirs["att"] and ours["pos"] < theirs["pos"])
    assert better >= 2


@pytest.mark.slow
def test_asteroid_errors_settle():
    config = parse_config(overrides={"scenario": "asteroid", "duration": 40.0, "n_runs": 1})
    result = run_scenario(config, RunSpec("asteroid", "hardsoft", config.snr, 0))
    assert not result.diverged
    errors = compute_metrics(result.truth, result.estimate).errors
    ten_seconds = int(10 * config.rate)
    last_round = errors["round"].max()

    def median_rms(frame):
        return frame.groupby("sat")[["err_att_rad", "err_pos_m", "err_angvel", "err_linvel"]].apply(
            lambda x: np.sqrt((x**2).mean())
        ).median()

    first = median_rms(errors[errors["round"] <= ten_seconds])
    last = median_rms(errors[errors["round"] > last_round - ten_seconds])
    assert (last < first).all()


@pytest.mark.slow
def test_leader_share_and_stubbornness_trends():
    config = parse_config(overrides={"scenario": "leaders", "duration": 30.0, "n_runs": 3, "window": 300})

    def median_error(fraction, stubborn):
        values = []
        for seed in config.seeds:
            result = run_scenario(config, RunSpec("leaders", "hardsoft", config.snr, seed, fraction, stubborn))
            assert not result.diverged
            values.append(fleet_median(result, config.window)["pos"])
        return np.median(values)

    for stubborn in (False, True):
        assert median_error(1.0, stubborn) <= median_error(0.2, stubborn)
    assert median_error(1.0, False) <= median_error(1.0, True)
