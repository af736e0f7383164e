"""Flat ``key = value`` experiment files.

Comments start with ``#`` or ``;``.  Keys are the ``ExperimentConfig`` field
names; ``algorithms`` takes a comma-separated list.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigError
from .nfl import ExperimentConfig

_SECTION = "experiment"


def _convert(name: str, raw: str):
    if name == "algorithms":
        return tuple(a.strip() for a in raw.split(",") if a.strip())
    if name == "T" and raw.lower() in ("", "none", "auto"):
        return None
    if name in ("K", "m", "T", "seed", "groups", "runs"):
        return int(raw)
    if name in ("eta", "B"):
        return None if raw.lower() in ("", "none", "auto") else float(raw)
    return raw


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str   # keys are case sensitive (K vs k)
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in parser[_SECTION].items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[key] = _convert(key, raw.strip())
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: no such config file")
    return parse_config_text(p.read_text(encoding="utf-8"))


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if f.name == "algorithms":
            v = ", ".join(v)
        lines.append(f"{f.name} = {'auto' if v is None else v}")
    return "\n".join(lines) + "\n"
