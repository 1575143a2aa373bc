"""Flat INI-style experiment configuration.

::

    [world]
    images = 1000
    split = 0.6, 0.2, 0.2
    [train]
    learning_rate = 0.0001
    [loss]
    variant = nce+distill
    [paths]
    out = runs/a

Every key is optional; unknown keys, malformed values and out-of-range
numbers are errors carrying the offending line.  ``WSG_SEED`` in the
environment overrides ``[train] seed``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .losses import LossConfig
from .synthcorpus import WorldSpec
from .trainer import TrainConfig

SEED_ENV = "WSG_SEED"
PATH_KEYS = ("data", "out", "ckpt", "report")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict[str, str] = field(default_factory=dict)

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    def with_variant(self, variant: str) -> "ExperimentConfig":
        loss = dataclasses.replace(self.train.loss, variant=variant)
        return dataclasses.replace(self, train=dataclasses.replace(self.train, loss=loss))

    def dumps(self) -> str:
        """Canonical text form; parsing it gives back an equal config."""
        out = []
        for name, obj in (("world", self.world), ("train", self.train), ("loss", self.train.loss)):
            out.append(f"[{name}]")
            for f in _fields(obj):
                out.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        out.append("[paths]")
        out += [f"{k} = {v}" for k, v in sorted(self.paths.items())]
        return "\n".join(out) + "\n"


def _fields(obj_or_cls):
    return [f for f in dataclasses.fields(obj_or_cls) if f.name != "loss"]


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


SECTIONS = {"world": WorldSpec, "train": TrainConfig, "loss": LossConfig}


def _convert(raw: str, default: Any):
    if isinstance(default, bool):
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.split(","))
    return raw


def defaults_help() -> str:
    """Every key with its default, for ``--help``."""
    lines = []
    for name, cls in SECTIONS.items():
        lines.append(f"[{name}]")
        obj = cls()
        lines += [f"  {f.name} = {_format(getattr(obj, f.name))}" for f in _fields(obj)]
    lines.append("[paths]")
    lines += [f"  {k} = (unset)" for k in PATH_KEYS]
    return "\n".join(lines)


def parse_config_text(text: str, env: dict[str, str] | None = None, source: str = "<config>") -> ExperimentConfig:
    env = os.environ if env is None else env
    values: dict[str, dict[str, tuple[Any, int]]] = {s: {} for s in (*SECTIONS, "paths")}
    seen: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in values:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if (section, key) in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key [{section}] {key} (first set on line {seen[section, key]})")
        seen[section, key] = lineno
        if section == "paths":
            if key not in PATH_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown key [paths] {key}")
            values["paths"][key] = (value, lineno)
            continue
        cls = SECTIONS[section]
        defaults = {f.name: getattr(cls(), f.name) for f in _fields(cls)}
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown key [{section}] {key}")
        try:
            converted = _convert(value, defaults[key])
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: [{section}] {key}: cannot read {value!r} as "
                              f"{type(defaults[key]).__name__}") from None
        values[section][key] = (converted, lineno)

    if SEED_ENV in env:
        try:
            values["train"]["seed"] = (int(env[SEED_ENV]), 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None

    built = {}
    for section, cls in SECTIONS.items():
        given = {k: v for k, (v, _) in values[section].items()}
        try:
            built[section] = _build(cls, given)
        except ValueError as exc:
            raise ConfigError(_locate(source, section, cls, values[section], exc)) from None
    train = dataclasses.replace(built["train"], loss=built["loss"])
    return ExperimentConfig(built["world"], train, {k: v for k, (v, _) in values["paths"].items()})


def _build(cls, kwargs):
    obj = cls(**kwargs)
    if isinstance(obj, WorldSpec):
        obj.validate()
    return obj


def _locate(source, section, cls, given, exc) -> str:
    """Blame the first key that is invalid on its own; else the section as a whole."""
    for key, (value, lineno) in sorted(given.items(), key=lambda kv: kv[1][1]):
        try:
            _build(cls, {key: value})
        except ValueError as solo:
            where = f"{source}:{lineno}" if lineno else f"{SEED_ENV}"
            return f"{where}: [{section}] {key} out of range: {solo}"
    lines = ", ".join(str(n) for _, n in sorted(given.values(), key=lambda v: v[1]) if n)
    return f"{source}: [{section}] inconsistent values (lines {lines}): {exc}"


def parse_config(path, env: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, env, str(path))
