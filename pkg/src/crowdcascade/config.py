"""Run configuration: nested dataclasses loaded from JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cascade import CascadeConfig
from .roi import PyramidSpec
from .simulator import OracleConfig, SimulatorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    pyramid: PyramidSpec = field(default_factory=PyramidSpec)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    seed: int = 0
    scenes: int = 100
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        sub = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, sub)
        elif typing.get_origin(tp) is tuple and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
