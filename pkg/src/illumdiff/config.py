"""Flat ``key = value`` config files.

One pair per line, ``#`` starts a comment, blank lines are ignored. Values
stay strings here; the dataclasses that consume them do the coercion.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def parse_overrides(pairs: typing.Iterable[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def dump_config(values: dict[str, typing.Any]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(value: str, annotation: typing.Any):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin in (tuple, list):
        elem = args[0] if args else str
        items = [v.strip() for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        return tuple(_coerce(v, elem) for v in items)
    if origin is typing.Union or str(origin) == "types.UnionType":
        non_none = [a for a in args if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, non_none[0])
    if annotation is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if annotation is int:
        return int(value)
    if annotation is float:
        return float(value)
    return value


def apply_to_dataclass(instance, values: dict[str, str], strict: bool = False):
    """Return a copy of ``instance`` with matching string ``values`` coerced in.

    Keys that don't name a field are ignored unless ``strict``.
    """
    hints = typing.get_type_hints(type(instance))
    changes = {}
    for key, raw in values.items():
        if key not in hints:
            if strict:
                raise ConfigError(f"unknown key {key!r} for {type(instance).__name__}")
            continue
        try:
            changes[key] = _coerce(raw, hints[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    return dataclasses.replace(instance, **changes)
