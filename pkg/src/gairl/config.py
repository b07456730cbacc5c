"""Experiment configuration: dataclass tree with strict file loading.

Every default equals the final published value for the corresponding
hyperparameter; an empty config file therefore reproduces the reference
experiment exactly. Unknown keys are hard errors so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .envs import ENV_KINDS, MOUNTAIN_CAR
from .imagination import ImaginationConfig
from .orchestrator import DEFAULT_CONVERGENCE_THRESHOLDS, PhaseSchedule
from .rainbow import AgentConfig

BASELINE = "baseline"
GAIRL_MLP = "gairl_mlp"
GAIRL_WGANGP = "gairl_wgangp"
VARIANTS = (BASELINE, GAIRL_MLP, GAIRL_WGANGP)

# The published experiments ran 15 independent seeds.
DEFAULT_SEEDS = [10, 50, 100, 500, 1000, 5000, 10_000, 50_000, 100_000,
                 500_000, 1_000_000, 5_000_000, 10_000_000, 50_000_000,
                 100_000_000]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class EnvironmentSettings:
    kind: str = MOUNTAIN_CAR
    max_episode_steps: int | None = None  # None: per-environment default

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"environment.kind must be one of {ENV_KINDS}, "
                              f"got {self.kind!r}")


@dataclass
class MemorySettings:
    capacity: int = 200_000
    train_fraction: float = 0.8
    oversample_terminals: bool = True
    store_transitions: bool = True

    def __post_init__(self):
        if self.capacity < 2:
            raise ConfigError("memory.capacity must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("memory.train_fraction must be in (0, 1)")


@dataclass
class ConvergenceSettings:
    threshold: float | None = None  # None: per-environment default
    window: int = 100
    min_episodes: int = 100


@dataclass
class LoggingSettings:
    train_log_every: int = 1
    write_checkpoints: bool = True
    dump_memory: bool = False


@dataclass
class ExperimentConfig:
    environment: EnvironmentSettings = field(default_factory=EnvironmentSettings)
    variant: str = GAIRL_WGANGP
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    agent: AgentConfig = field(default_factory=AgentConfig)
    imagination: ImaginationConfig = field(default_factory=ImaginationConfig)
    memory: MemorySettings = field(default_factory=MemorySettings)
    convergence: ConvergenceSettings = field(default_factory=ConvergenceSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, "
                              f"got {self.variant!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # The variant owns the state-model family; baseline runs no
        # imagination at all, encoded as zero ITP/IBP budgets.
        if self.variant == GAIRL_MLP:
            self.imagination.state_model_kind = "mlp"
        elif self.variant == GAIRL_WGANGP:
            self.imagination.state_model_kind = "wgangp"
        else:
            self.schedule.rho2 = 0
            self.schedule.rho3 = 0

    def convergence_threshold(self) -> float:
        if self.convergence.threshold is not None:
            return self.convergence.threshold
        return DEFAULT_CONVERGENCE_THRESHOLDS[self.environment.kind]

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out["convergence"]["threshold"] = self.convergence_threshold()
        return json.loads(json.dumps(out))  # normalize tuples to JSON shape


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(tp, value, path: str):
    """Map parsed YAML/JSON values onto a dataclass field type, strictly."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build_dataclass(tp, value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        (item_tp, *_rest) = typing.get_args(tp) or (int,)
        items = [_coerce(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            value = int(value)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {_type_name(tp)}")


def _build_dataclass(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        loc = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key {loc!r}")
        kwargs[key] = _coerce(known[key], value, loc)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    return _build_dataclass(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    """Parse a YAML or JSON experiment config; unspecified keys keep the
    published defaults, unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text) if text.strip() else {}
    else:
        data = yaml.safe_load(text)
    return config_from_dict(data or {})
