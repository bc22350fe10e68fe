"""Flat ``key = value`` config files mapped onto nested dataclasses.

Keys are dotted paths into the config tree, e.g. ``model.wifi.d = 32`` or
``train.objective.weights.sup = 0``. Tuples are comma-separated. Lines
starting with ``#`` are comments. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from pathlib import Path


class ConfigFileError(ValueError):
    pass


def _text(val, tp) -> str:
    if val is None:
        return "none"
    # an int stored in a float field must serialise like the float it equals
    if tp is float or isinstance(val, float):
        return repr(float(val))
    return str(val)


def flatten(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        tp = hints[f.name]
        if dataclasses.is_dataclass(val):
            out.update(flatten(val, key + "."))
        elif isinstance(val, tuple):
            args = typing.get_args(tp)
            out[key] = ",".join(_text(v, args[0] if args else None) for v in val)
        else:
            out[key] = _text(val, tp)
    return out


def _coerce(tp, raw: str, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            if raw.lower() == "none":
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(inner, raw, key)
        if origin is tuple:
            item = args[0]
            return tuple(_coerce(item, x.strip(), key) for x in raw.split(",") if x.strip())
        if tp is bool:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {raw!r} as {tp}") from None
    raise ConfigFileError(f"{key}: unsupported field type {tp}")


def build(cls, values: dict[str, str], prefix: str = "", base=None):
    """Instantiate dataclass ``cls`` from dotted ``values`` (consumed in place)."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        tp = hints[f.name]
        default = getattr(base, f.name) if base is not None else None
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = build(tp, values, key + ".", default)
        elif key in values:
            kwargs[f.name] = _coerce(tp, values.pop(key), key)
        elif base is not None:
            kwargs[f.name] = default
    return cls(**kwargs)


def parse(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigFileError(f"line {n}: expected 'key = value', got {line!r}")
        values[key.strip()] = val.strip()
    return values


def load_configs(text: str, **roots):
    """Build one dataclass per root, e.g. ``load_configs(t, model=ModelConfig)``.

    Missing keys fall back to each class's defaults.
    """
    values = parse(text)
    out = {name: build(cls, values, name + ".", cls()) for name, cls in roots.items()}
    if values:
        raise ConfigFileError(f"unknown config keys: {sorted(values)}")
    return out


def load_config_file(path, **roots):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigFileError(f"cannot read config {path}: {e}") from e
    return load_configs(text, **roots)


def dump_configs(**objs) -> str:
    lines = []
    for name, obj in objs.items():
        lines += [f"{k} = {v}" for k, v in flatten(obj, name + ".").items()]
    return "\n".join(lines) + "\n"


def config_hash(**objs) -> str:
    return hashlib.sha256(dump_configs(**objs).encode()).hexdigest()[:16]
