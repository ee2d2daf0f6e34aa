"""Flat ``key = value`` config files and dataclass coercion."""

import dataclasses
import json
import typing


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_kv(path):
    with open(path) as fh:
        return parse_kv(fh.read())


def _fmt(value):
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def dump_kv(mapping):
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in mapping.items())


def _coerce(value, hint):
    if not isinstance(value, str):
        return value
    if value.strip().lower() in ("", "none"):
        return None
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    if hint is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if origin is tuple:
        return tuple(args[0](v) for v in value.replace(" ", "").split(",") if v)
    if hint in (int, float, str):
        return hint(value)
    return json.loads(value)


def build(cls, values):
    """Instantiate dataclass ``cls`` from a mapping of (possibly string) values.

    Unknown keys raise ``ValueError`` so typos in config files do not pass silently.
    """
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**{k: _coerce(v, hints[k]) for k, v in values.items()})


def merge(cls, file_values=None, overrides=None):
    """Defaults < config file < explicit overrides (``None`` overrides are ignored)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build(cls, values)


def as_dict(cfg):
    return dataclasses.asdict(cfg)
