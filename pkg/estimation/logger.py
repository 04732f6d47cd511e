import logging
import os

from rich.logging import RichHandler


def get_logger(name: str) -> logging.Logger:
    """Set a logger instance that writes through rich to the console."""

    logger = logging.getLogger(name)

    # One handler per logger, even when modules are re-imported by worker processes
    if not logger.hasHandlers():
        handler = RichHandler(show_time=False, show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
        level = os.environ.get("DQFLEET_LOG_LEVEL", "INFO").upper()
        logger.setLevel(getattr(logging, level, logging.INFO))
        logger.propagate = False

    return logger
