from __future__ import annotations

import json
import threading
from pathlib import Path

from homog.log import logger

# Optional per-user overrides, merged over the packaged defaults
USER_CONFIG_FILE = Path.home() / ".homog" / "config.json"

# In-memory config (loaded once, protected by lock)
_config = None
_config_lock = threading.Lock()


def get_config() -> dict:
    """Get the library config: packaged defaults merged with user overrides.

    Double-check pattern ensures only one thread populates the cache.
    """
    global _config

    # _config transitions None -> dict once and is never mutated afterwards
    if _config is not None:
        return _config

    with _config_lock:
        if _config is not None:
            return _config

        result = _load_defaults()
        user = _load_user_config()
        if user:
            result = _merge(result, user)
        _config = result
        return _config


def reset_config() -> None:
    """Drop the cached config. Mainly for testing."""
    global _config
    with _config_lock:
        _config = None


def get_section(name: str) -> dict:
    return get_config().get(name, {})


def _load_defaults() -> dict:
    try:
        defaults_path = Path(__file__).parent / "defaults.json"
        with open(defaults_path, "r") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        logger.warning("Failed to load defaults.json, using minimal hardcoded config")
        return {
            "solver": {},
            "cell": {},
            "upscale": {},
            "solve": {},
            "lab": {},
            "field": {},
        }


def _load_user_config() -> dict | None:
    try:
        if not USER_CONFIG_FILE.exists():
            return None
        with open(USER_CONFIG_FILE, "r") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            logger.debug("User config is not a dict, ignoring")
            return None
        return data
    except (OSError, json.JSONDecodeError):
        logger.warning("Failed to load user config from %s", USER_CONFIG_FILE)
        return None


def _merge(base: dict, override: dict, depth: int = 0) -> dict:
    """Deep merge override into base. Override values win.

    Args:
        base: The base dict to merge into.
        override: The override dict whose values win on conflict.
        depth: Current recursion depth. Stops recursing at 10.
    """
    _MAX_MERGE_DEPTH = 10
    result = base.copy()
    for key, value in override.items():
        if key.startswith("_"):
            continue
        if (
            depth < _MAX_MERGE_DEPTH
            and key in result
            and isinstance(result[key], dict)
            and isinstance(value, dict)
        ):
            result[key] = _merge(result[key], value, depth=depth + 1)
        else:
            result[key] = value
    return result


def setting(section: str, key: str, default):
    """Read one library setting, falling back to ``default`` on any problem."""
    try:
        value = get_config().get(section, {}).get(key, default)
    except (AttributeError, TypeError):
        return default
    if isinstance(default, bool) or value is None:
        return default if value is None else value
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        logger.warning("Config %s.%s has non-numeric value %r, using %r", section, key, value, default)
        return default
    return type(default)(value)
