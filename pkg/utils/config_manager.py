"""
Configuration Manager for the SharesSkew workbench
Handles loading and lookup of planner, executor and workbench settings
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from utils.error_handler import ConfigurationError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "settings.json"
DATA_DIR_ENV = "SHARESSKEW_DATA_DIR"


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ConfigManager:
    """Manages configuration settings for planning and simulation runs"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
        self.config: Dict[str, Any] = {}
        self.logger = logging.getLogger(__name__)
        self.load_config()

    def load_config(self) -> None:
        """Load configuration from JSON file, layered over the defaults"""
        defaults = self._get_default_config()
        if not self.config_path.exists():
            self.logger.warning(f"Configuration file not found: {self.config_path}, using defaults")
            self.config = defaults
            return

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(
                f"Failed to load configuration: {e}",
                context={"path": str(self.config_path)},
            ) from e

        if not isinstance(loaded, dict):
            raise ConfigurationError(
                "Configuration root must be a JSON object",
                context={"path": str(self.config_path)},
            )
        self.config = _deep_merge(defaults, loaded)
        self.logger.debug(f"Configuration loaded from {self.config_path}")

    def save_config(self, path: Optional[str] = None) -> Path:
        """Save current configuration to JSON file"""
        target = Path(path) if path else self.config_path
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.config, f, indent=2, ensure_ascii=False)
        self.logger.info(f"Configuration saved to {target}")
        return target

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key (supports dot notation)"""
        value: Any = self.config
        for k in key.split("."):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def set(self, key: str, value: Any) -> None:
        """Set configuration value by key (supports dot notation), in memory only"""
        keys = key.split(".")
        config = self.config
        for k in keys[:-1]:
            config = config.setdefault(k, {})
        config[keys[-1]] = value

    def get_planner_settings(self) -> Dict[str, Any]:
        return dict(self.get("planner", {}))

    def get_heavy_hitter_settings(self) -> Dict[str, Any]:
        """HH threshold settings; capacity falls back to the planner's q"""
        settings = dict(self.get("heavy_hitters", {}))
        if settings.get("capacity_q") is None and settings.get("tau") is None:
            settings["capacity_q"] = self.get("planner.capacity_q")
        return settings

    def get_executor_settings(self) -> Dict[str, Any]:
        return dict(self.get("executor", {}))

    def get_oracle_settings(self) -> Dict[str, Any]:
        return dict(self.get("oracle", {}))

    def get_hashing_settings(self) -> Dict[str, Any]:
        return dict(self.get("hashing", {}))

    def get_workbench_settings(self) -> Dict[str, Any]:
        return dict(self.get("workbench", {}))

    def get_logging_settings(self) -> Dict[str, Any]:
        return dict(self.get("logging", {}))

    def get_data_dir(self) -> Path:
        """Default data directory; the environment variable wins over the settings file"""
        env_dir = os.environ.get(DATA_DIR_ENV)
        if env_dir:
            return Path(env_dir)
        return Path(self.get_workbench_settings().get("data_dir", "data"))

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration"""
        return {
            "planner": {
                "capacity_q": 1000,
                "combination_cap": 10000,
                "solver_tolerance": 1e-9,
                "solver_max_iterations": 10000,
                "max_reducers": 1000000,
                "workers": 1,
            },
            "heavy_hitters": {
                "capacity_q": None,
                "tau": None,
                "workers": 1,
            },
            "executor": {
                "reducer_memory_cap": 5000000,
                "workers": 1,
                "verify_identity": True,
            },
            "oracle": {
                "result_cap": 10000000,
            },
            "hashing": {
                "master_seed": 1729,
            },
            "workbench": {
                "data_dir": "data",
                "seed": 7,
            },
            "logging": {
                "level": "INFO",
                "log_dir": None,
            },
        }


_config_instance: Optional[ConfigManager] = None


def get_config(config_path: Optional[str] = None) -> ConfigManager:
    """Get the process-wide configuration instance"""
    global _config_instance
    if _config_instance is None or config_path is not None:
        _config_instance = ConfigManager(config_path)
    return _config_instance
