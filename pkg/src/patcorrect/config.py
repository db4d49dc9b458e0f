"""Flat run configuration shared by all subcommands.

A config file is either a JSON object or ``key = value`` lines (``#`` starts a
comment; values are parsed as JSON when possible, otherwise kept as strings).
Keys are the field names of :class:`ModelConfig`, :class:`TrainConfig` and
:class:`NoiseConfig` plus ``dict``; ``seed`` is shared by training and noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .model import ModelConfig
from .synth import NoiseConfig
from .train import TrainConfig

PATH_KEYS = ("dict",)


class ConfigError(ValueError):
    """Bad config file or override; the CLI reports it as a usage error."""


def _keys(cls) -> set[str]:
    return {f.name for f in fields(cls)}


MODEL_KEYS = _keys(ModelConfig)
TRAIN_KEYS = _keys(TrainConfig)
NOISE_KEYS = _keys(NoiseConfig)
ALL_KEYS = MODEL_KEYS | TRAIN_KEYS | NOISE_KEYS | set(PATH_KEYS)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    paths: dict = field(default_factory=lambda: {k: None for k in PATH_KEYS})

    def flat(self) -> dict:
        out = {}
        out.update(asdict(self.noise))
        out.update(asdict(self.train))
        out.update(asdict(self.model))
        out.update(self.paths)
        return out


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("none", "null"):
            return None
        return raw


def parse_assignments(lines: Iterable[str], source: str = "<overrides>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def read_config_file(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: JSON config must be an object")
        return values
    return parse_assignments(text.splitlines(), str(path))


def build_run_config(values: dict) -> RunConfig:
    unknown = set(values) - ALL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = RunConfig().flat()
    base.update(values)
    try:
        return RunConfig(
            model=ModelConfig(**{k: base[k] for k in MODEL_KEYS}),
            train=TrainConfig(**{k: base[k] for k in TRAIN_KEYS}),
            noise=NoiseConfig(**{k: base[k] for k in NOISE_KEYS}),
            paths={k: base[k] for k in PATH_KEYS},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    values = read_config_file(path) if path is not None else {}
    values.update(parse_assignments(overrides))
    return build_run_config(values)
