import configparser
import os

import pandas as pd

from estimation.exceptions import ExportError
from estimation.logger import get_logger
from simulation.config import MANIFEST_SECTION, RunManifest, config_items
from simulation.metrics import ERROR_COLUMNS

# Set logger
logger = get_logger(__name__)

FLOAT_FORMAT = "%.9g"
RUN_COLUMNS = ["round", "t", "sat", "mode"] + list(ERROR_COLUMNS.values())


def _prepare_directory(directory: str):
    # Validate parameter type
    if not isinstance(directory, str):
        logger.exception("Invalid parameter format: directory")
        raise ValueError("A valid directory is a string.")
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        logger.exception("Output directory could not be created.")
        raise ExportError(f"{e}")


def write_run_log(directory: str, file_name: str, label: str, errors: pd.DataFrame) -> str:
    """
    Write the per-round error log of one run.

    Parameters
    ----------
    directory : str
        Output directory, created when missing.
    file_name : str
        Run file name, e.g. ``run_hardsoft_snr1000_seed0.csv``.
    label : str
        Value of the ``mode`` column.
    errors : pandas.DataFrame
        Output of ``metrics.error_series``.

    Returns
    -------
    str
        Path of the written file.

    Raises
    ------
    ValueError
        If ``directory`` is not a string.
    ExportError
        If writing fails.
    """
    _prepare_directory(directory)
    path = os.path.join(directory, file_name)
    log = errors.copy()
    log.insert(3, "mode", label)
    try:
        log[RUN_COLUMNS].to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except Exception as e:
        logger.exception(f"Writing run log failed: {file_name}")
        raise ExportError(f"{e}")
    return path


def write_summary(directory: str, summary: pd.DataFrame) -> str:
    """Write ``summary.csv``; an empty summary is refused."""
    _prepare_directory(directory)
    if summary.empty:
        logger.exception("Empty DataFrame.")
        raise ValueError("Empty DataFrame: summary. Can't proceed.")
    path = os.path.join(directory, "summary.csv")
    try:
        summary.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except Exception as e:
        logger.exception("Writing summary failed.")
        raise ExportError(f"{e}")
    return path


def write_manifest(directory: str, manifest: RunManifest) -> str:
    """
    Write ``manifest.ini``: the resolved configuration and the run metadata.

    Passing the file back through ``--config`` reproduces the batch.
    """
    _prepare_directory(directory)
    parser = configparser.ConfigParser(interpolation=None)
    parser["scenario"] = config_items(manifest.config)
    parser[MANIFEST_SECTION] = {
        "seeds": ",".join(str(s) for s in manifest.seeds),
        "out": manifest.out,
        "version": manifest.version,
    }
    path = os.path.join(directory, "manifest.ini")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            parser.write(handle)
    except OSError as e:
        logger.exception("Writing manifest failed.")
        raise ExportError(f"{e}")
    return path
