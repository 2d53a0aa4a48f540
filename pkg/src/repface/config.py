"""Flat ``key = value`` config files mapped onto dataclasses.

Blank lines and ``#`` comments are ignored. Tuples are comma separated,
``none`` clears an optional field, ``inf`` is accepted for floats. Unknown
keys and missing required keys raise ``ConfigError``.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from pathlib import Path

from .errors import ConfigError


def _convert(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() == "none" and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _convert(raw, inner, key)
    try:
        if origin is tuple:
            return tuple(_convert(p.strip(), args[0], key) for p in raw.split(",") if p.strip())
        if tp is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw, 0)
        if tp is float:
            v = float(raw)
            if math.isnan(v):
                raise ValueError(raw)
            return v
        if tp is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def from_pairs(cls, pairs: dict[str, str], source: str = "<config>"):
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(pairs) - set(fields))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
    missing = [n for n, f in fields.items()
               if n not in pairs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(f"{source}: missing required key(s): {', '.join(missing)}")
    kwargs = {k: _convert(v, hints[k], k) for k, v in pairs.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(cls, path):
    path = Path(path)
    return from_pairs(cls, parse_pairs(path.read_text(), str(path)), str(path))


def dump(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, tuple):
            s = ", ".join(str(x) for x in v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"
