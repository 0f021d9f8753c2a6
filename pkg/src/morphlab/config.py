"""Config-file loading and per-command schema validation.

Every malformed field produces a ConfigError naming that field, so CLI
users see exactly which key to fix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

_REQUIRED = object()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    name: str
    type: type
    default: object = _REQUIRED
    check: object = None          # predicate(value) -> bool
    check_msg: str = ""

    @property
    def required(self) -> bool:
        return self.default is _REQUIRED


def positive(v):
    return v > 0


def nonnegative(v):
    return v >= 0


def validate(schema, data: dict) -> dict:
    """Merge data against a schema (sequence of Fields); returns the
    validated config dict."""
    by_name = {f.name: f for f in schema}
    for key in data:
        if key not in by_name:
            raise ConfigError(f"field '{key}': unknown config key")
    out = {}
    for f in schema:
        if f.name in data and data[f.name] is not None:
            value = data[f.name]
        elif f.required:
            raise ConfigError(f"field '{f.name}': required but missing")
        else:
            value = f.default
        if value is not None:
            if f.type is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, f.type) or isinstance(value, bool) and f.type is not bool:
                raise ConfigError(
                    f"field '{f.name}': expected {f.type.__name__}, "
                    f"got {type(value).__name__} ({value!r})")
            if f.check is not None and not f.check(value):
                raise ConfigError(
                    f"field '{f.name}': invalid value {value!r}"
                    + (f" ({f.check_msg})" if f.check_msg else ""))
        out[f.name] = value
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"field 'config': file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"field 'config': invalid JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"field 'config': top level must be an object")
    return data


def merge_cli_overrides(file_config: dict, overrides: dict) -> dict:
    """CLI flags override config-file keys; None flags are ignored."""
    merged = dict(file_config)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged
