"""
Configuration loading.

Loads YAML configuration files, substitutes ${ENV_VAR} placeholders and
deep-merges scenario values over the simulator defaults.
"""

import logging
import os
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml


logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "simulation.yml"


def substitute_env_vars(config: Any) -> Any:
    """Replace ${VAR} placeholders with environment values (left as-is when unset)."""
    if isinstance(config, dict):
        return {k: substitute_env_vars(v) for k, v in config.items()}
    elif isinstance(config, list):
        return [substitute_env_vars(item) for item in config]
    elif isinstance(config, str) and config.startswith('${') and config.endswith('}'):
        env_var = config[2:-1]
        return os.getenv(env_var, config)
    return config


def load_yaml_config(config_path: Union[str, Path]) -> Dict[str, Any]:
    """Load a YAML file with environment substitution."""
    with open(config_path, 'r') as f:
        config = yaml.safe_load(f) or {}
    return substitute_env_vars(config)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge `override` into a copy of `base`."""
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def load_simulation_config(config_path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Load simulator defaults.

    Args:
        config_path: Path to simulation.yml; the bundled file when None

    Returns:
        Configuration dictionary (empty when the file is missing)
    """
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    if not path.exists():
        logger.warning(f"Configuration file not found: {path}; using built-in defaults")
        return {}
    return load_yaml_config(path)
