"""Read and write pixseg configuration.

Two kinds of configuration live here:

* **User settings** in ``~/.pixseg.toml`` (or the file named by the
  ``PIXSEG_SETTINGS`` environment variable): logging level, inference worker
  threads and where crash reports go.  Defaults are merged with user
  overrides; a corrupt file falls back to defaults.
* **Run configs** describing a :class:`~pixseg.model.ModelConfig`, stored as
  JSON or TOML (picked by file suffix).  Keys mirror the dataclass field names;
  unknown keys are rejected so that a typo never silently falls back to a
  default.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:
    import tomli as tomllib  # type: ignore

import tomli_w

from pixseg.errors import ConfigError
from pixseg.model import ModelConfig
from pixseg.modes import DeficitPolicy, SamplerStrategy
from pixseg.optim import SgdConfig

logger = logging.getLogger(__name__)

SETTINGS_ENV = "PIXSEG_SETTINGS"
SETTINGS_FILE = Path.home() / ".pixseg.toml"

# Default settings
# ----------------
# The shape of this dictionary matches the TOML file on disk.
DEFAULT_SETTINGS: Dict[str, Any] = {
    "logging": {
        "level": "INFO",
    },
    "inference": {
        "workers": 1,
    },
    "crash": {
        # Empty string: tracebacks go to stderr instead of a file.
        "report_path": "",
    },
}

DEFAULT_RUN_CONFIG: Dict[str, Any] = {
    "in_channels": 3,
    "stages": [[2, 16], [2, 32], [2, 64]],
    "tap_stages": [0, 1, 2],
    "mlp_widths": [64, 64],
    "n_classes": 4,
    "n_sample_pixels": 256,
    "sampler": SamplerStrategy.CLASS_BALANCED.value,
    "deficit_policy": DeficitPolicy.REPLACE.value,
    "ignore_label": None,
    "sgd": {
        "learning_rate": 0.01,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "seed": 0,
    },
    "iterations": 2000,
    "tile_height": 16,
    "head_init_scale": 0.01,
    "channels": None,
    "label_values": None,
    "log_every": 100,
}


def settings_path() -> Path:
    override = os.environ.get(SETTINGS_ENV)
    return Path(override).expanduser() if override else SETTINGS_FILE


def load_settings() -> Dict[str, Any]:
    """Load user settings from file or return defaults."""
    path = settings_path()
    if not path.exists():
        return copy.deepcopy(DEFAULT_SETTINGS)
    try:
        with open(path, "rb") as f:
            user = tomllib.load(f)
        return _merge_config(DEFAULT_SETTINGS, user)
    except (OSError, tomllib.TOMLDecodeError) as err:
        print(f"Warning: ignoring unreadable settings file {path}: {err}", file=sys.stderr)
        return copy.deepcopy(DEFAULT_SETTINGS)


def save_settings(settings: Dict[str, Any]) -> None:
    path = settings_path()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            tomli_w.dump(settings, f)
    except OSError as err:
        print(f"Warning: Failed to save settings to {path}: {err}", file=sys.stderr)


def _merge_config(default: Dict[str, Any], user: Dict[str, Any]) -> Dict[str, Any]:
    """Merge user config with defaults, preserving user values."""
    result = copy.deepcopy(default)
    for key, value in user.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _merge_config(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def reject_unknown_keys(user: Dict[str, Any], known: Dict[str, Any], where: str = "") -> None:
    for key, value in user.items():
        dotted = f"{where}{key}"
        if key not in known:
            raise ConfigError(f"unknown configuration key: {dotted}")
        if isinstance(known[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {dotted} must be a table/object")
            reject_unknown_keys(value, known[key], f"{dotted}.")


# ----------------------------------------------------------------------
# Structured files (JSON or TOML by suffix)
# ----------------------------------------------------------------------
def read_structured(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def write_structured(path: Union[str, Path], data: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".toml":
        with open(path, "wb") as f:
            tomli_w.dump(_drop_none(data), f)
    else:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _drop_none(data: Dict[str, Any]) -> Dict[str, Any]:
    # TOML has no null; absent keys fall back to defaults on load.
    return {
        key: _drop_none(value) if isinstance(value, dict) else value
        for key, value in data.items()
        if value is not None
    }


# ----------------------------------------------------------------------
# Run config <-> ModelConfig
# ----------------------------------------------------------------------
def model_config_to_dict(config: ModelConfig) -> Dict[str, Any]:
    raw = asdict(config)
    raw["stages"] = [list(stage) for stage in config.stages]
    raw["tap_stages"] = list(config.tap_stages)
    raw["mlp_widths"] = list(config.mlp_widths)
    raw["sampler"] = config.sampler.value
    raw["deficit_policy"] = config.deficit_policy.value
    raw["channels"] = list(config.channels) if config.channels is not None else None
    raw["label_values"] = list(config.label_values) if config.label_values is not None else None
    raw["sgd"] = asdict(config.sgd)
    return raw


def model_config_from_dict(user: Dict[str, Any]) -> ModelConfig:
    """Validate ``user`` against the run-config schema and build a ModelConfig."""
    reject_unknown_keys(user, DEFAULT_RUN_CONFIG)
    merged = _merge_config(DEFAULT_RUN_CONFIG, user)
    try:
        sgd = SgdConfig(
            learning_rate=float(merged["sgd"]["learning_rate"]),
            momentum=float(merged["sgd"]["momentum"]),
            weight_decay=float(merged["sgd"]["weight_decay"]),
            seed=int(merged["sgd"]["seed"]),
        )
        kwargs = {f.name: merged[f.name] for f in fields(ModelConfig) if f.name != "sgd"}
        kwargs["sampler"] = SamplerStrategy(merged["sampler"])
        kwargs["deficit_policy"] = DeficitPolicy(merged["deficit_policy"])
        kwargs["stages"] = tuple(tuple(stage) for stage in merged["stages"])
        for stage in kwargs["stages"]:
            if len(stage) != 2:
                raise ConfigError(f"each stage must be [n_convs, width], got {list(stage)}")
        return ModelConfig(sgd=sgd, **kwargs)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid run config: {err}") from err


def load_run_config(path: Optional[Union[str, Path]]) -> ModelConfig:
    if path is None:
        return model_config_from_dict({})
    config = model_config_from_dict(read_structured(path))
    logger.info("loaded run config %s", path)
    return config


def save_run_config(path: Union[str, Path], config: ModelConfig) -> None:
    write_structured(path, model_config_to_dict(config))


__all__ = [
    "SETTINGS_FILE",
    "SETTINGS_ENV",
    "DEFAULT_SETTINGS",
    "DEFAULT_RUN_CONFIG",
    "load_settings",
    "save_settings",
    "reject_unknown_keys",
    "read_structured",
    "write_structured",
    "model_config_to_dict",
    "model_config_from_dict",
    "load_run_config",
    "save_run_config",
]
