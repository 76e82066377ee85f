"""Flat ``key=value`` text files mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from ..errors import ConfigError


def _convert(raw: str, kind, key):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def parse_kv(text: str, cls, source="<config>"):
    """Instance of dataclass ``cls`` from ``key=value`` lines; unknown keys are rejected."""
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _convert(raw, kinds[key], f"{source}:{lineno}: {key}")
    return cls(**values)


def read_kv(path, cls):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_kv(text, cls, str(path))


def format_kv(obj) -> str:
    return "".join(f"{f.name}={getattr(obj, f.name)!r}\n".replace("'", "") for f in dataclasses.fields(obj))


def write_kv(path, obj) -> None:
    Path(path).write_text(format_kv(obj), encoding="utf-8")
