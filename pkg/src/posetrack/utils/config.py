import dataclasses
import json
from pathlib import Path
from typing import Any, Dict, TypeVar

from posetrack.utils.errors import ConfigError


class Config:
    LOGGER_NAME = "posetrack"
    FRAME_WIDTH = 150
    FRAME_HEIGHT = 150
    MAX_DELTA_TRANS = 0.02
    RESET_INTERVAL = 15
    FAIL_TRANS_MM = 30.0
    FAIL_ROT_DEG = 20.0
    BANK_SIZE = 64
    REFLECTIVE_THRESHOLD_DEG = 100.0
    ATTENTION_GRID = 8


config = Config()

T = TypeVar("T")


def load_flat_config(path: Path) -> Dict[str, Any]:
    """
    Read a flat JSON object of configuration overrides.

    :param path: Path to the JSON file.

    :return: Dict[str, Any]

    :raises ConfigError: If the file is missing, unreadable or not a flat object.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: '{path}'.", field=str(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file '{path}' is not valid JSON: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"Config file '{path}' must hold a JSON object.")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(f"Config key '{key}' must be a scalar.", field=key)
    return data


def _field_owner(cfg: Any, key: str) -> Any:
    names = {f.name for f in dataclasses.fields(cfg)}
    if key in names:
        return cfg
    for f in dataclasses.fields(cfg):
        child = getattr(cfg, f.name)
        if dataclasses.is_dataclass(child) and _field_owner(child, key) is not None:
            return child
    return None


def _coerce(key: str, current: Any, value: Any) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"Config key '{key}' must be a boolean.", field=key)
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Config key '{key}' must be an integer.", field=key)
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"Config key '{key}' must be a number.", field=key)
        return float(value)
    if isinstance(current, tuple):
        raise ConfigError(f"Config key '{key}' is not overridable.", field=key)
    return value


def apply_overrides(cfg: T, overrides: Dict[str, Any]) -> T:
    """
    Apply flat overrides to a (possibly nested) configuration dataclass.

    Each key must name exactly one field somewhere in the dataclass tree.

    :param cfg: Frozen configuration dataclass.
    :param overrides: Flat mapping of field name to new value.

    :return: A new dataclass with the overrides applied.

    :raises ConfigError: If a key is unknown or a value has the wrong type.
    """
    for key, value in overrides.items():
        if _field_owner(cfg, key) is None:
            raise ConfigError(f"Unknown config key '{key}'.", field=key)
        cfg = _replace_nested(cfg, key, value)
    return cfg


def _replace_nested(cfg: Any, key: str, value: Any) -> Any:
    names = {f.name for f in dataclasses.fields(cfg)}
    if key in names:
        coerced = _coerce(key, getattr(cfg, key), value)
        try:
            return dataclasses.replace(cfg, **{key: coerced})
        except ValueError as e:
            raise ConfigError(f"Config key '{key}': {e}", field=key)
    for f in dataclasses.fields(cfg):
        child = getattr(cfg, f.name)
        if dataclasses.is_dataclass(child) and _field_owner(child, key) is not None:
            return dataclasses.replace(cfg, **{f.name: _replace_nested(child, key, value)})
    raise ConfigError(f"Unknown config key '{key}'.", field=key)


def config_echo(cfg: Any) -> Dict[str, Any]:
    """
    Flatten a configuration dataclass into a JSON-friendly dictionary.

    :param cfg: Configuration dataclass.

    :return: Dict[str, Any]
    """
    flat: Dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            flat.update(config_echo(value))
        elif isinstance(value, tuple):
            flat[f.name] = list(value)
        else:
            flat[f.name] = value
    return flat
