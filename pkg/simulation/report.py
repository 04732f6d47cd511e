import pandas as pd
from rich.console import Console
from rich.table import Table


def _fmt(value) -> str:
    if isinstance(value, float):
        return "-" if pd.isna(value) else f"{value:.3g}"
    return str(value)


def report(summary: pd.DataFrame, nees: dict = None, console: Console = None):
    """
    Display the batch summary using CLI tables.

    Runs are grouped by configuration (scenario, mode, consensus, SNR, leader fraction); each row shows
    the run count, divergences, clamp events and the medians across runs of the fleet
    median RMS errors.

    Parameters
    ----------
    summary : pandas.DataFrame
        Output of ``metrics.summarize_runs``.
    nees : dict, optional
        ``nees_statistics`` output pooled over the non-cooperative runs, shown as a second table.
    console : rich.console.Console, optional
        Defaults to a new console on stdout.

    Returns
    -------
    None
        Output is printed directly to the console.
    """
    console = console or Console()

    keys = ["scenario", "mode", "consensus", "snr", "leader_fraction"]
    grouped = summary.groupby(keys, sort=False).agg(
        runs=("seed", "count"),
        diverged=("diverged", "sum"),
        clamps=("clamp_events", "sum"),
        att=("rms_att_median", "median"),
        pos=("rms_pos_median", "median"),
        angvel=("rms_angvel_median", "median"),
        linvel=("rms_linvel_median", "median"),
    ).reset_index()

    # Main summary table
    table = Table(title="Fleet Estimation Report")
    for col, style in (
        ("Scenario", "cyan"), ("Mode", "cyan"), ("Consensus", "cyan"), ("SNR", "white"), ("Leaders", "white"),
        ("Runs", "white"), ("Diverged", "red"), ("Clamps", "yellow"),
        ("Att RMS [rad]", "magenta"), ("Pos RMS [m]", "magenta"),
        ("Ang vel RMS", "magenta"), ("Lin vel RMS", "magenta"),
    ):
        table.add_column(col, style=style)
    for row in grouped.itertuples(index=False):
        table.add_row(*[_fmt(cell) for cell in row])
    console.print(table)

    if nees:
        console.print()
        runs = nees.get("runs", 1)
        title = f"Filter Consistency (NEES, {runs} run{'' if runs == 1 else 's'})"
        nees_table = Table(show_header=True, header_style="bold green", title=title)
        for col in ("Mean", "Band low", "Band high", "Rounds inside"):
            nees_table.add_column(col, style="white")
        nees_table.add_row(_fmt(nees["mean"]), _fmt(nees["low"]), _fmt(nees["high"]), _fmt(nees["inside"]))
        console.print(nees_table)

    console.print()
