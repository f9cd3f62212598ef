"""Run configuration: line-oriented ``key = value`` files with sections.

Parsed with :mod:`configparser`; every key is validated up front and unknown
sections or keys are rejected so typos fail loudly before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import configparser

from .backbone import TcnConfig, TrainConfig
from .errors import ConfigError

_KNOWN_KEYS = {
    "data": {"csv", "timestamp_column", "power_column", "covariate_columns"},
    "backbone": {"layers", "channels", "kernel_size", "dilations"},
    "training": {"learning_rate", "batch_size", "max_epochs", "patience",
                 "seed", "grid_size"},
    "generate": {"n_scenarios", "seed"},
    "metrics": {"variogram_order"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class RunConfig:
    csv: str | None = None
    timestamp_column: str = "timestamp"
    power_column: str = "power"
    covariate_columns: tuple[str, ...] = ()
    tcn: TcnConfig = field(default_factory=TcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    grid_size: int = 512
    n_scenarios: int = 100
    generate_seed: int = 0
    variogram_order: float = 2.0
    output_dir: str = "out"


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser.options(section)) - _KNOWN_KEYS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    defaults = RunConfig()
    tcn = TcnConfig(
        layers=_get(parser, "backbone", "layers", int, defaults.tcn.layers),
        channels=_get(parser, "backbone", "channels", int, defaults.tcn.channels),
        kernel_size=_get(parser, "backbone", "kernel_size", int, defaults.tcn.kernel_size),
        dilations=_get(parser, "backbone", "dilations", _int_list, ()),
    )
    train = TrainConfig(
        learning_rate=_get(parser, "training", "learning_rate", float,
                           defaults.train.learning_rate),
        batch_size=_get(parser, "training", "batch_size", int, defaults.train.batch_size),
        max_epochs=_get(parser, "training", "max_epochs", int, defaults.train.max_epochs),
        patience=_get(parser, "training", "patience", int, defaults.train.patience),
    )
    config = RunConfig(
        csv=_get(parser, "data", "csv", str, None),
        timestamp_column=_get(parser, "data", "timestamp_column", str,
                              defaults.timestamp_column),
        power_column=_get(parser, "data", "power_column", str, defaults.power_column),
        covariate_columns=_get(parser, "data", "covariate_columns", _str_list, ()),
        tcn=tcn,
        train=train,
        seed=_get(parser, "training", "seed", int, defaults.seed),
        grid_size=_get(parser, "training", "grid_size", int, defaults.grid_size),
        n_scenarios=_get(parser, "generate", "n_scenarios", int, defaults.n_scenarios),
        generate_seed=_get(parser, "generate", "seed", int, defaults.generate_seed),
        variogram_order=_get(parser, "metrics", "variogram_order", float,
                             defaults.variogram_order),
        output_dir=_get(parser, "output", "dir", str, defaults.output_dir),
    )
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.train.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if config.train.batch_size < 1 or config.train.max_epochs < 1:
        raise ConfigError("batch_size and max_epochs must be >= 1")
    if config.train.patience < 1:
        raise ConfigError("patience must be >= 1")
    if config.grid_size < 64:
        raise ConfigError("grid_size must be >= 64")
    if config.n_scenarios < 1:
        raise ConfigError("n_scenarios must be >= 1")
    if config.variogram_order <= 0:
        raise ConfigError("variogram_order must be positive")
