import argparse
import os
import sys

from estimation import __version__
from estimation.exceptions import ConfigError, ControlError, ExportError, FilterError, GraphError
from estimation.logger import get_logger
from simulation.config import MODES, RunManifest, ScenarioConfig, parse_config
from simulation.export import write_manifest, write_run_log, write_summary
from simulation.harness import run_batch
from simulation.metrics import nees_statistics, pool_nees, summarize_runs
from simulation.report import report

# Set logger
logger = get_logger(__name__)

### Parameter Definition ###

COMMANDS = {
    "sweep": "sweep",
    "asteroid": "asteroid",
    "leaders": "leaders",
    "single-demo": "single",
}
DEFAULT_OUT = "results"
DIVERGENCE_LIMIT = 0.5

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_USAGE = 2


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "on", "1"):
        return True
    if value in ("false", "no", "off", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dqfleet",
        description="Distributed dual-quaternion MEKF experiments for satellite fleets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="INI file with key = value entries")
        cmd.add_argument("--out", default=DEFAULT_OUT, help="output directory")
        cmd.add_argument("--seed", type=int, help="first seed")
        cmd.add_argument("--snr", type=float, help="signal-to-noise ratio")
        cmd.add_argument("--sats", type=int, help="number of satellites")
        cmd.add_argument("--mode", choices=MODES, help="consensus mode")
        cmd.add_argument("--leaders", type=float, help="fraction of satellites with an absolute sensor")
        cmd.add_argument("--stubborn", type=_bool, help="leaders ignore neighbour information (true/false)")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    """
    Map command-line flags to configuration keys.

    ``--snr`` pins the sweep to that single value and ``--leaders`` pins the leader sweep
    to that single fraction.
    """
    overrides = {
        "scenario": COMMANDS[args.command],
        "seed": args.seed,
        "snr": args.snr,
        "n_sats": args.sats,
        "mode": args.mode,
        "leader_fraction": args.leaders,
        "stubborn": args.stubborn,
    }
    if args.snr is not None:
        overrides["snr_values"] = (args.snr,)
    if args.leaders is not None:
        overrides["leader_fractions"] = (args.leaders,)
    return overrides


def run_command(config: ScenarioConfig, out: str) -> int:
    """
    Execute the configured scenario and write run logs, summary and manifest to ``out``.

    Returns
    -------
    int
        0 on success, 1 when more than half of the runs diverged.
    """
    results = run_batch(config)

    logger.info("Computing metrics...")
    summary, metrics = summarize_runs(results, window=config.window)

    logger.info(f"Writing results to {out}")
    for result, run_metrics in zip(results, metrics):
        write_run_log(out, result.spec.file_name, result.spec.label, run_metrics.errors)
    write_summary(out, summary)
    write_manifest(out, RunManifest(config=config, seeds=config.seeds, out=out, version=__version__))

    single_runs = [r.nees for r in results if r.spec.mode == "single" and not r.nees.empty]
    nees = nees_statistics(pool_nees(single_runs), window=config.window) if single_runs else None
    report(summary, nees)

    diverged = int(summary["diverged"].sum())
    if diverged > DIVERGENCE_LIMIT * len(summary):
        logger.error(f"{diverged} of {len(summary)} runs diverged.")
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        logger.info("Reading configuration...")
        config = parse_config(args.config, overrides_from_args(args))
        return run_command(config, os.path.normpath(args.out))

    except ConfigError as e:
        logger.error(f"{args.command} stopped due to configuration error: {e}")
    except GraphError as e:
        logger.error(f"{args.command} stopped due to graph error: {e}")
    except ControlError as e:
        logger.error(f"{args.command} stopped due to controller error: {e}")
    except FilterError as e:
        logger.error(f"{args.command} stopped due to filter error: {e}")
    except ValueError as e:
        logger.error(f"{args.command} stopped due to parameter issue: {e}")
    except (ExportError, OSError) as e:
        logger.error(f"{args.command} stopped due to I/O error: {e}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
