"""Config-file plumbing: dataclass sections loaded from JSON, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path


class ConfigError(ValueError):
    pass


def from_mapping(cls, data: dict | None, section=""):
    """Build dataclass ``cls`` from ``data``, rejecting keys it does not declare."""
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in [{section}]" if section else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    for f in dataclasses.fields(cls):
        if f.name in data and isinstance(data[f.name], list):
            default = f.default if f.default is not dataclasses.MISSING else None
            if isinstance(default, tuple) or "tuple" in str(f.type):
                data[f.name] = tuple(tuple(v) if isinstance(v, list) else v for v in data[f.name])
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section or cls.__name__}] config: {exc}") from exc


def to_mapping(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


SECTIONS = ("case", "fault", "sim", "sampler", "train", "experiment")


def load_config(path) -> dict:
    """Read a JSON config file; top level may only hold the known sections."""
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return data
