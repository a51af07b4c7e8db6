"""Experiment configuration: strict JSON in, resolved JSON out.

Every section maps onto a frozen dataclass. Unknown keys are rejected,
missing keys take the dataclass defaults, and value errors are reported
with the dotted path of the offending key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .energy import PowerConfig
from .net import ConfigError, NetworkConfig
from .phy import PhyConstants
from .ppo import PpoConfig
from .transfer import MODES, TransferConfig

RUN_MODES = ("train_master", "train", "eval", "sweep_arrival", "oracle", "gradcheck")


@dataclass(frozen=True)
class RunSettings:
    """Run-level knobs that belong to no single module."""

    transfer_mode: str = "random_init"
    master_updates: int = 100
    eval_ttis: int = 200
    final_fraction: float = 0.1
    arrival_rates: tuple = (2.0, 4.0, 6.0, 8.0)
    sweep_modes: tuple = MODES
    target_pathloss_slope_db: float = 41.0
    target_shadowing_sigma_db: float = 8.0

    def __post_init__(self):
        if self.transfer_mode not in MODES:
            raise ConfigError(f"transfer_mode must be one of {MODES}")
        if self.master_updates < 1 or self.eval_ttis < 1:
            raise ConfigError("master_updates and eval_ttis must be >= 1")
        if not 0.0 < self.final_fraction <= 1.0:
            raise ConfigError("final_fraction must lie in (0, 1]")
        if not self.arrival_rates or any(r < 0 for r in self.arrival_rates):
            raise ConfigError("arrival_rates must be a non-empty list of non-negative rates")
        bad = [m for m in self.sweep_modes if m not in MODES]
        if not self.sweep_modes or bad:
            raise ConfigError(f"sweep_modes must be a non-empty subset of {MODES}")
        if self.target_shadowing_sigma_db < 0:
            raise ConfigError("target_shadowing_sigma_db must be >= 0")


@dataclass(frozen=True)
class ExperimentSpec:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    run: RunSettings = field(default_factory=RunSettings)
    mode: str = "train"
    output_dir: str = "runs"
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode must be one of {RUN_MODES}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")

    @property
    def source(self) -> NetworkConfig:
        return self.network

    @property
    def target(self) -> NetworkConfig:
        return self.network.replace(pathloss_slope_db=self.run.target_pathloss_slope_db,
                                    shadowing_sigma_db=self.run.target_shadowing_sigma_db)

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


# ------------------------------------------------------------------ parse


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        for i, v in enumerate(value):
            if isinstance(v, (list, dict)) or v is None:
                raise ConfigError(f"{path}[{i}]: expected a scalar, got {v!r}")
        return tuple(value)
    raise ConfigError(f"{path}: unsupported field type {hint!r}")


def _tuple_items(cls, name: str, value: tuple, default: tuple, path: str) -> tuple:
    """Element types of tuple fields follow the default's element types."""
    kinds = {type(x) for x in default}
    if kinds <= {int} and kinds:
        return tuple(_coerce(v, int, f"{path}[{i}]") for i, v in enumerate(value))
    if kinds <= {int, float} and kinds:
        return tuple(_coerce(v, float, f"{path}[{i}]") for i, v in enumerate(value))
    if kinds <= {str} and kinds:
        return tuple(_coerce(v, str, f"{path}[{i}]") for i, v in enumerate(value))
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '$'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key {where!r}")
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}" if path else name
        v = _coerce(value, hints[name], where)
        if isinstance(v, tuple):
            f = fields[name]
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            if isinstance(default, tuple):
                v = _tuple_items(cls, name, v, default, where)
        kwargs[name] = v
    try:
        return cls(**kwargs)
    except (ConfigError, ValueError) as exc:
        keys = ", ".join(kwargs) or "defaults"
        raise ConfigError(f"{path or '$'} ({keys}): {exc}") from None


def parse_config(data: dict) -> ExperimentSpec:
    return _build(ExperimentSpec, data, "")


def load_config(path) -> ExperimentSpec:
    """Strictly parse a JSON experiment file; an empty file means all defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if not text.strip():
        return ExperimentSpec()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)


# ------------------------------------------------------------------- dump


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def dumps(spec: ExperimentSpec) -> str:
    return json.dumps(to_dict(spec), indent=2, sort_keys=True)


def dump(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(dumps(spec) + "\n")


def config_hash(spec: ExperimentSpec) -> str:
    return hashlib.sha256(json.dumps(to_dict(spec), sort_keys=True).encode()).hexdigest()[:16]


def code_hash() -> str:
    """Digest of the package sources, so artifacts can be traced to code."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def check_writable(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output_dir {str(path)!r} is not writable")
    return path


__all__ = ["ExperimentSpec", "RunSettings", "RUN_MODES", "PhyConstants", "PowerConfig",
           "load_config", "parse_config", "dump", "dumps", "to_dict", "config_hash", "code_hash"]
