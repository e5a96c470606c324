#!/usr/bin/env python

"""
Configuration loader that starts from built-in defaults and applies user,
project and explicit overrides.

Precedence (highest first): explicit ``--config`` file, ``./config/cvqkd-rt.yaml``,
``~/.config/cvqkd-rt/settings.yaml``, built-in defaults. YAML and JSON files are
both accepted; every layer is deep-merged before validation.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from cvqkd_rt.basemodels import ProtocolConfig
from cvqkd_rt.errors import ConfigError

logger = logging.getLogger(__name__)

PROJECT_CONFIG_NAMES = ("cvqkd-rt.yaml", "cvqkd-rt.yml", "cvqkd-rt.json")
USER_CONFIG_NAMES = ("settings.yaml", "settings.yml", "settings.json")


def _load_file(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping at the top level")
    return data


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Return ``base`` updated recursively with ``override`` (inputs untouched)."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def discover_config_files(
    project_dir: Path | None = None, user_dir: Path | None = None
) -> list[Path]:
    """Config files in ascending precedence: user first, project last."""
    project_dir = project_dir or Path.cwd() / "config"
    user_dir = user_dir or Path.home() / ".config" / "cvqkd-rt"
    found: list[Path] = []
    for folder, names in ((user_dir, USER_CONFIG_NAMES), (project_dir, PROJECT_CONFIG_NAMES)):
        if not folder.exists():
            continue
        for name in names:
            path = folder / name
            if path.exists():
                found.append(path)
                break
    return found


def parse_override(text: str) -> dict[str, Any]:
    """Turn ``a.b.c=value`` into ``{"a": {"b": {"c": value}}}``.

    The value is parsed as YAML so numbers, booleans and lists keep their type.
    """
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key.path=value")
    dotted, raw = text.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value: Any = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value in '{text}': {e}") from e
    for key in reversed(keys):
        value = {key: value}
    return value


def build_config(data: dict[str, Any]) -> ProtocolConfig:
    """Validate a raw mapping, reporting pydantic errors as ConfigError."""
    try:
        return ProtocolConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def apply_overrides(config: ProtocolConfig, overrides: dict[str, Any]) -> ProtocolConfig:
    """Return a new config with ``overrides`` deep-merged on top of ``config``."""
    if not overrides:
        return config
    return build_config(deep_merge(config.model_dump(), overrides))


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    discover: bool = True,
) -> ProtocolConfig:
    """Load the effective ProtocolConfig."""
    merged: dict[str, Any] = {}
    sources: list[Path] = discover_config_files() if discover else []
    if path is not None:
        explicit = Path(path).expanduser()
        if not explicit.exists():
            raise ConfigError(f"config file not found: {explicit}")
        sources.append(explicit)
    for source in sources:
        logger.debug("Loading configuration layer %s", source)
        merged = deep_merge(merged, _load_file(source))
    if overrides:
        merged = deep_merge(merged, overrides)
    return build_config(merged)


__all__ = [
    "apply_overrides",
    "build_config",
    "deep_merge",
    "discover_config_files",
    "load_config",
    "parse_override",
]
