"""Run configuration: a flat ``section.key = value`` file merged with overrides.

Sections are ``paths``, ``ingest``, ``model``, ``train`` and ``synth``.  Every
key is validated before any work starts; unknown keys are an error.  Only
``paths.*`` may come from the environment (``FLOWFUSE_<KEY>``, for example
``FLOWFUSE_DATA_DIR``).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .ingest import ConfigError, TripSchema
from .models import ModelConfig
from .synth import SynthConfig
from .training import TrainConfig

PATH_KEYS = {
    "data_dir": "data",
    "run_dir": "runs/default",
    "taxi_trips": "",
    "aux_trips": "",
    "zones": "",
    "out": "",
}

INGEST_DEFAULTS = {
    "epoch": "2021-01-01",
    "days": "31",
    "taxi.pickup_time": TripSchema().pickup_time,
    "taxi.dropoff_time": TripSchema().dropoff_time,
    "taxi.pickup_zone": TripSchema().pickup_zone,
    "taxi.dropoff_zone": TripSchema().dropoff_zone,
    "aux.pickup_time": "pickup_datetime",
    "aux.dropoff_time": "dropoff_datetime",
    "aux.pickup_zone": TripSchema().pickup_zone,
    "aux.dropoff_zone": TripSchema().dropoff_zone,
    "delimiter": ",",
}

_NONE = {"none", "null", ""}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _converter(default: Any, name: str):
    if name in ("variant", "baseline"):
        return lambda s: None if s.strip().lower() in _NONE else s.strip()
    if name == "profile":
        return lambda s: None if s.strip().lower() in _NONE else tuple(float(v) for v in s.split(","))
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return lambda s: tuple(int(v) for v in s.split(","))
    return str


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    paths: dict[str, str] = field(default_factory=lambda: dict(PATH_KEYS))
    ingest: dict[str, str] = field(default_factory=lambda: dict(INGEST_DEFAULTS))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "RunConfig":
        paths = dict(PATH_KEYS)
        ingest = dict(INGEST_DEFAULTS)
        sections: dict[str, dict[str, Any]] = {"model": {}, "train": {}, "synth": {}}
        defaults = {"model": ModelConfig(), "train": TrainConfig(), "synth": SynthConfig()}

        for key, raw in values.items():
            section, _, name = key.partition(".")
            if not name:
                raise ConfigError(f"config key {key!r} has no section prefix")
            if section == "paths":
                if name not in PATH_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                paths[name] = raw
            elif section == "ingest":
                if name not in INGEST_DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                ingest[name] = raw
            elif section in sections:
                known = {f.name for f in fields(defaults[section])}
                if name not in known:
                    raise ConfigError(f"unknown config key {key!r}")
                try:
                    sections[section][name] = _converter(getattr(defaults[section], name), name)(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from None
            else:
                raise ConfigError(f"unknown config section in key {key!r}")

        try:
            int(ingest["days"])
        except ValueError:
            raise ConfigError(f"bad value for ingest.days: {ingest['days']!r}") from None
        try:
            model = ModelConfig(**sections["model"])
            train = TrainConfig(**sections["train"])
            synth = SynthConfig(**sections["synth"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(paths, ingest, model, train, synth)

    def with_model(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, model=dataclasses.replace(self.model, **changes))

    def flat(self) -> dict[str, str]:
        """Every resolved key, suitable for writing back as a config file."""
        out = {f"paths.{k}": v for k, v in self.paths.items()}
        out.update({f"ingest.{k}": v for k, v in self.ingest.items()})
        for section in ("model", "train", "synth"):
            obj = getattr(self, section)
            for f in fields(obj):
                out[f"{section}.{f.name}"] = _render(getattr(obj, f.name))
        return out

    def write(self, path) -> None:
        lines = [f"{k} = {v}" for k, v in self.flat().items()]
        Path(path).write_text("\n".join(lines) + "\n")

    def schema(self, platform: str) -> TripSchema:
        g = self.ingest
        return TripSchema(g[f"{platform}.pickup_time"], g[f"{platform}.dropoff_time"],
                          g[f"{platform}.pickup_zone"], g[f"{platform}.dropoff_zone"],
                          "\t" if g["delimiter"] == "tab" else g["delimiter"])


def load_run_config(path=None, overrides: Mapping[str, str] | None = None,
                    env: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults < config file < environment (paths only) < explicit overrides."""
    values = read_config_file(path) if path else {}
    env = os.environ if env is None else env
    for key in PATH_KEYS:
        env_key = f"FLOWFUSE_{key.upper()}"
        if env_key in env:
            values[f"paths.{key}"] = env[env_key]
    values.update(overrides or {})
    return RunConfig.from_mapping(values)
