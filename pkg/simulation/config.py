"""
Scenario configuration: flat ``key = value`` INI files plus command-line overrides.

Section names only organise the file; keys are read across all sections except
``[manifest]``, which holds metadata written next to the results.
"""

import configparser
import difflib
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Optional

from estimation.exceptions import ConfigError
from estimation.logger import get_logger

# Set logger
logger = get_logger(__name__)

SCENARIOS = ("sweep", "asteroid", "leaders", "single")
MODES = ("single", "none", "soft", "hardsoft")
SENSING = ("velocity", "pose_only")
MANIFEST_SECTION = "manifest"
THREADS_ENV = "DQFLEET_THREADS"


@dataclass(frozen=True)
class ScenarioConfig:
    """Every experiment parameter, with its default."""

    scenario: str = "sweep"
    n_sats: int = 10
    duration: float = 60.0
    rate: float = 20.0
    edge_probability: float = 0.5
    snr: float = 1000.0
    snr_values: tuple = (10.0, 1000.0)
    position_scale: float = 10.0
    # Explicit noise levels; 0 keeps the value derived from the SNR (or the asteroid settings)
    std_q: float = 0.0
    std_r: float = 0.0
    q_bias_omega: float = 0.0
    q_bias_v: float = 0.0
    mode: str = "hardsoft"
    baseline: bool = False
    leader_fraction: float = 1.0
    leader_fractions: tuple = (0.2, 0.5, 1.0)
    stubborn: bool = False
    seed: int = 0
    n_runs: int = 2
    sensing: str = "velocity"
    noiseless: bool = False
    exact_init: bool = False
    window: int = 600
    mass: float = 10.0
    inertia: tuple = (2.0, 3.0, 4.0)
    omega_scale: float = 0.02
    velocity_scale: float = 0.1
    lattice_radius: float = 25.0
    start_plane: float = 40.0
    grid_spacing: float = 5.0
    lqr_q: float = 0.1
    lqr_r: float = 0.1
    edge_list: str = ""

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(range(self.seed, self.seed + self.n_runs))


@dataclass(frozen=True)
class RunManifest:
    config: ScenarioConfig
    seeds: tuple
    out: str
    version: str


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def valid_keys() -> list[str]:
    return sorted(_FIELD_TYPES)


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    if isinstance(kind, str):
        kind = {"str": str, "int": int, "float": float, "bool": bool, "tuple": tuple}[kind]
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"not a boolean: {value!r}")
            return configparser.ConfigParser.BOOLEAN_STATES[text]
        if kind is tuple:
            items = value if isinstance(value, (list, tuple)) else str(value).split(",")
            return tuple(float(item) for item in items if str(item).strip() != "")
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if kind is float:
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Key '{key}' expects {kind.__name__}: {e}")


def _check_key(key: str):
    if key not in _FIELD_TYPES:
        suggestion = difflib.get_close_matches(key, valid_keys(), n=1)
        hint = f" Did you mean '{suggestion[0]}'?" if suggestion else ""
        raise ConfigError(f"Unknown key '{key}'.{hint} Valid keys: {', '.join(valid_keys())}.")


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """
    Range checks on a resolved configuration.

    Raises
    ------
    ConfigError
        Naming the first offending key.
    """
    checks = [
        ("scenario", config.scenario in SCENARIOS, f"one of {SCENARIOS}"),
        ("mode", config.mode in MODES, f"one of {MODES}"),
        ("sensing", config.sensing in SENSING, f"one of {SENSING}"),
        ("n_sats", config.n_sats >= 1, "at least 1"),
        ("rate", config.rate > 0, "positive"),
        ("duration", config.duration > 0, "positive"),
        ("edge_probability", 0 < config.edge_probability <= 1, "in (0, 1]"),
        ("snr", config.snr > 0, "positive"),
        ("snr_values", len(config.snr_values) > 0 and min(config.snr_values) > 0, "a nonempty list of positive values"),
        ("leader_fraction", 0 < config.leader_fraction <= 1, "in (0, 1]"),
        ("leader_fractions", len(config.leader_fractions) > 0 and all(0 < f <= 1 for f in config.leader_fractions), "values in (0, 1]"),
        ("n_runs", config.n_runs >= 1, "at least 1"),
        ("mass", config.mass > 0, "positive"),
        ("inertia", len(config.inertia) == 3 and min(config.inertia) > 0, "three positive values"),
        ("window", config.window >= 0, "nonnegative"),
        ("std_q", 0 <= config.std_q < 1, "in [0, 1)"),
        ("std_r", config.std_r >= 0, "nonnegative"),
        ("q_bias_omega", config.q_bias_omega >= 0, "nonnegative"),
        ("q_bias_v", config.q_bias_v >= 0, "nonnegative"),
    ]
    for key, ok, expected in checks:
        if not ok:
            raise ConfigError(f"Key '{key}' must be {expected}, got {getattr(config, key)!r}.")
    return config


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """
    Read a scenario configuration and apply overrides.

    Parameters
    ----------
    path : str, optional
        INI file with flat ``key = value`` entries. Without a path only defaults and
        overrides are used.
    overrides : dict, optional
        Values that win over the file; ``None`` entries are ignored.

    Returns
    -------
    ScenarioConfig

    Raises
    ------
    ConfigError
        If the file is missing, a key is unknown (the nearest valid key is suggested),
        a value has the wrong type, or a value is out of range.
    """
    values: dict[str, Any] = {}

    if path is not None:
        if not os.path.exists(path):
            logger.exception(f"Configuration file not found: {path}")
            raise ConfigError(f"Configuration file '{path}' does not exist.")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
            if not text.lstrip().startswith("["):
                text = "[scenario]\n" + text
            parser.read_string(text, source=path)
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse '{path}': {e}")
        for section in parser.sections():
            if section == MANIFEST_SECTION:
                continue
            for key, raw in parser.items(section):
                _check_key(key)
                values[key] = _coerce(key, raw)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        _check_key(key)
        values[key] = _coerce(key, value)

    config = validate(replace(ScenarioConfig(), **values))
    logger.debug(f"Resolved configuration: {config}")
    return config


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(config: ScenarioConfig) -> dict[str, str]:
    return {key: _format(value) for key, value in asdict(config).items()}


def thread_count() -> int:
    """Run-level worker cap from ``DQFLEET_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV}={raw!r}, expected an integer")
        return 1
