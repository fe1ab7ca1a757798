"""Configuration management for the rank AFT toolkit"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .exceptions import SchemaError

THREADS_ENV = "RANK_AFT_THREADS"


class ToolkitConfig:
    """Handles configuration loading and management"""

    def __init__(self, config_file: str = None):
        self.config_file = config_file or "config.yaml"
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file, layered over the defaults"""
        config_path = Path(self.config_file)
        defaults = self._get_default_config()

        if not config_path.exists():
            return defaults

        try:
            with open(config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except Exception as e:
            print(f"⚠️  Warning: Could not load config file {config_path}: {e}")
            print("📝 Using default configuration")
            return defaults

        if not isinstance(loaded, dict):
            raise SchemaError(f"config file {config_path} must contain a mapping")
        return _merge(defaults, loaded)

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration"""
        return {
            'fit': {
                'weight': "gehan",
                'cluster_weight': "none",
                'big_m': "auto",
                'max_outer_iter': 50,
                'outer_tol': 1.0e-4,
                'seed': 0,
            },
            'solver': {
                'tol': 1.0e-7,
                'max_iter': 200,
                'block_size': 256,
            },
            'variance': {
                'resamples': 200,
                'k_scale': 1.0,
                'ci_level': 0.95,
            },
            'runtime': {
                'threads': 1,
            },
            'logging': {
                'level': "INFO",
                'file': "rank_aft.log",
            },
        }

    def get_weight_kind(self) -> str:
        """Get rank weight kind (gehan or logrank)"""
        return str(self.get_config_value('fit.weight', "gehan"))

    def get_cluster_weight(self) -> str:
        """Get cluster weight spec (none, inverse or power:alpha)"""
        return str(self.get_config_value('fit.cluster_weight', "none"))

    def get_big_m(self) -> Optional[float]:
        """Get big-M override; None means the adaptive rule"""
        value = self.get_config_value('fit.big_m', "auto")
        if value is None or str(value).lower() == "auto":
            return None
        return float(value)

    def get_max_outer_iter(self) -> int:
        return int(self.get_config_value('fit.max_outer_iter', 50))

    def get_outer_tol(self) -> float:
        return float(self.get_config_value('fit.outer_tol', 1.0e-4))

    def get_seed(self) -> int:
        return int(self.get_config_value('fit.seed', 0))

    def get_solver_tol(self) -> float:
        return float(self.get_config_value('solver.tol', 1.0e-7))

    def get_solver_max_iter(self) -> int:
        return int(self.get_config_value('solver.max_iter', 200))

    def get_block_size(self) -> int:
        return int(self.get_config_value('solver.block_size', 256))

    def get_resamples(self) -> int:
        """Get number of perturbation resamples R"""
        return int(self.get_config_value('variance.resamples', 200))

    def get_k_scale(self) -> float:
        return float(self.get_config_value('variance.k_scale', 1.0))

    def get_ci_level(self) -> float:
        return float(self.get_config_value('variance.ci_level', 0.95))

    def get_threads(self) -> int:
        """Get worker thread count; the environment overrides the file"""
        env_value = os.environ.get(THREADS_ENV)
        if env_value:
            try:
                return max(1, int(env_value))
            except ValueError:
                raise SchemaError(f"{THREADS_ENV} must be an integer, got {env_value!r}")
        return max(1, int(self.get_config_value('runtime.threads', 1)))

    def get_logging_level(self) -> str:
        """Get logging level"""
        return self.get_config_value('logging.level', "INFO")

    def get_logging_file(self) -> str:
        """Get logging file path"""
        return self.get_config_value('logging.file', "rank_aft.log")

    def get_config_value(self, key_path: str, default=None):
        """Get a configuration value by dot-separated key path"""
        keys = key_path.split('.')
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def resolved(self) -> Dict[str, Any]:
        """Deep copy of the effective configuration, for run manifests"""
        return copy.deepcopy(self.config)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged
