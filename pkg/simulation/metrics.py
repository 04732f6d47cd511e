from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import chi2

from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)

TRAJECTORY_COLUMNS = [
    "round", "t", "sat",
    "q0", "q1", "q2", "q3",
    "rx", "ry", "rz",
    "wx", "wy", "wz", "vx", "vy", "vz",
]
ERROR_COLUMNS = {
    "att": "err_att_rad",
    "pos": "err_pos_m",
    "angvel": "err_angvel",
    "linvel": "err_linvel",
}
QUARTILES = {"q1": 0.25, "median": 0.5, "q3": 0.75}
SUMMARY_KEYS = ["scenario", "mode", "consensus", "snr", "leader_fraction", "seed", "diverged", "clamp_events", "message"]
SUMMARY_COLUMNS = SUMMARY_KEYS + [f"rms_{q}_{stat}" for q in ERROR_COLUMNS for stat in QUARTILES]


@dataclass(frozen=True)
class Metrics:
    """
    Error time series of one run and their statistics.

    Attributes
    ----------
    errors : pandas.DataFrame
        ``round, t, sat`` and one column per error quantity.
    rms : pandas.DataFrame
        Per-satellite RMS over the window, indexed by ``sat``, columns ``att, pos, angvel, linvel``.
    quartiles : pandas.DataFrame
        Fleet quartiles of ``rms``, indexed by ``q1, median, q3``.
    """

    errors: pd.DataFrame
    rms: pd.DataFrame
    quartiles: pd.DataFrame


def attitude_error(q_estimate: np.ndarray, q_true: np.ndarray) -> np.ndarray:
    """Rotation angle ``2 acos|scalar(q̂* q)|`` row by row [rad]."""
    dot = np.abs(np.sum(np.atleast_2d(q_estimate) * np.atleast_2d(q_true), axis=1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))


def error_series(truth: pd.DataFrame, estimate: pd.DataFrame) -> pd.DataFrame:
    """
    Per-round estimation errors of aligned truth and estimate trajectories.

    Raises
    ------
    ValueError
        If the logs do not cover the same rounds and satellites in the same order.
    """
    if truth.shape != estimate.shape or not truth[["round", "sat"]].equals(estimate[["round", "sat"]]):
        logger.exception("Misaligned logs.")
        raise ValueError("Truth and estimate logs must cover the same rounds and satellites.")

    errors = truth[["round", "t", "sat"]].copy()
    errors["err_att_rad"] = attitude_error(estimate[["q0", "q1", "q2", "q3"]].to_numpy(dtype=float), truth[["q0", "q1", "q2", "q3"]].to_numpy(dtype=float))
    for name, columns in (
        ("err_pos_m", ["rx", "ry", "rz"]),
        ("err_angvel", ["wx", "wy", "wz"]),
        ("err_linvel", ["vx", "vy", "vz"]),
    ):
        errors[name] = np.linalg.norm(estimate[columns].to_numpy(dtype=float) - truth[columns].to_numpy(dtype=float), axis=1)
    return errors


def windowed(errors: pd.DataFrame, window: int) -> pd.DataFrame:
    """Last ``window`` rounds of every satellite; 0 keeps everything."""
    if window <= 0 or errors.empty:
        return errors
    return errors[errors["round"] > errors["round"].max() - window]


def compute_metrics(truth: pd.DataFrame, estimate: pd.DataFrame, window: int = 0) -> Metrics:
    """
    RMS errors per satellite and fleet quartiles.

    Parameters
    ----------
    truth : pandas.DataFrame
        Truth trajectory log (``TRAJECTORY_COLUMNS``).
    estimate : pandas.DataFrame
        Own-estimate log aligned with ``truth``.
    window : int, optional
        Number of trailing rounds the RMS is taken over; 0 (default) uses the whole run.

    Returns
    -------
    Metrics
        Empty logs give empty ``rms`` and NaN quartiles.
    """
    errors = error_series(truth, estimate)
    recent = windowed(errors, window)

    rms = pd.DataFrame({
        key: recent.groupby("sat")[column].apply(lambda x: float(np.sqrt(np.mean(np.square(x)))))
        for key, column in ERROR_COLUMNS.items()
    })
    if rms.empty:
        quartiles = pd.DataFrame(np.nan, index=list(QUARTILES), columns=list(ERROR_COLUMNS))
    else:
        quartiles = rms.quantile(list(QUARTILES.values()))
        quartiles.index = list(QUARTILES)
    return Metrics(errors=errors, rms=rms, quartiles=quartiles)


def summary_row(spec, diverged: bool, clamp_events: int, message: str, metrics: Metrics) -> dict:
    """One ``summary.csv`` row; ``mode`` reads ``stubborn`` for stubborn leader runs, ``consensus`` keeps the filter mode."""
    row = {
        "scenario": spec.scenario,
        "mode": spec.label,
        "consensus": spec.mode,
        "snr": spec.snr,
        "leader_fraction": spec.leader_fraction,
        "seed": spec.seed,
        "diverged": diverged,
        "clamp_events": clamp_events,
        "message": message,
    }
    for q in ERROR_COLUMNS:
        for stat in QUARTILES:
            row[f"rms_{q}_{stat}"] = metrics.quartiles.loc[stat, q]
    return row


def summarize_runs(results: list, window: int = 0) -> tuple[pd.DataFrame, list[Metrics]]:
    """
    Metrics of every run and the batch summary table.

    Parameters
    ----------
    results : list of RunResult
    window : int, optional
        RMS window in rounds.

    Returns
    -------
    summary : pandas.DataFrame
        One row per run, ``SUMMARY_COLUMNS``.
    metrics : list of Metrics
        In the order of ``results``.
    """
    metrics = [compute_metrics(r.truth, r.estimate, window) for r in results]
    rows = [summary_row(r.spec, r.diverged, r.clamp_events, r.message, m) for r, m in zip(results, metrics)]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS), metrics


def nees_band(dim: int, runs: int, p: float = 0.95) -> tuple[float, float]:
    """
    Two-sided acceptance band of the NEES averaged over ``runs`` independent samples.

    A consistent filter's averaged NEES falls inside
    ``[chi2.ppf((1-p)/2, runs*dim), chi2.ppf((1+p)/2, runs*dim)] / runs`` with probability ``p``.
    """
    if dim < 1 or runs < 1:
        logger.exception("Invalid parameter: dim/runs")
        raise ValueError("The NEES band needs a positive dimension and run count.")
    if not 0.0 < p < 1.0:
        logger.exception("Invalid parameter: p")
        raise ValueError("The probability must lie in (0, 1).")
    dof = dim * runs
    low, high = chi2.ppf([(1.0 - p) / 2.0, (1.0 + p) / 2.0], dof)
    return float(low / runs), float(high / runs)


def pool_nees(logs: list) -> pd.DataFrame:
    """Stack per-run NEES logs with a ``run`` column; empty logs are skipped."""
    logs = [log for log in logs if not log.empty]
    if not logs:
        return pd.DataFrame(columns=["run", "round", "sat", "nees"])
    return pd.concat([log.assign(run=index) for index, log in enumerate(logs)], ignore_index=True)


def nees_statistics(nees: pd.DataFrame, dim: int = 12, window: int = 0, p: float = 0.95) -> dict:
    """
    Average NEES per round across satellites (and runs), its mean and the share of rounds inside the band.

    The band is taken for as many samples per round as there are ``(run, sat)`` pairs.
    """
    if nees.empty:
        return {"mean": np.nan, "low": np.nan, "high": np.nan, "inside": np.nan, "runs": 0}
    recent = windowed(nees, window)
    sources = [c for c in ("run", "sat") if c in recent.columns]
    samples = int(recent.groupby(sources).ngroups)
    runs = int(recent["run"].nunique()) if "run" in recent.columns else 1
    per_round = recent.groupby("round")["nees"].mean()
    low, high = nees_band(dim, samples, p)
    inside = float(((per_round >= low) & (per_round <= high)).mean())
    return {"mean": float(per_round.mean()), "low": low, "high": high, "inside": inside, "runs": runs}
