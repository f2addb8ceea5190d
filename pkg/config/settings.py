"""
config/settings.py - Configuration management
"""

import os
import json
from typing import Any, Dict, List, Optional, cast


class ConfigLegacy:
    """Base configuration class: config.json with environment overrides"""

    # Load from environment or config file
    _config_data: Optional[Dict] = None

    @classmethod
    def _load_config(cls) -> Dict:
        """Load configuration from file"""
        if cls._config_data is None:
            config_path = os.getenv("CONFIG_PATH", "config.json")
            try:
                with open(config_path, "r") as f:
                    cls._config_data = json.load(f)
            except FileNotFoundError:
                cls._config_data = cls._get_default_config()
        return cls._config_data

    @classmethod
    def _get_default_config(cls) -> Dict:
        """Default configuration"""
        return {
            "fit": {
                "inner_tol": 1e-7,
                "max_iter": 100,
                "outer_tol": 1e-6,
                "outer_max_iter": 200,
                "seed": 42,
            },
            "outer": {
                "drop_tol": 1e-4,
            },
            "experiment": {
                "threads": 1,
                "replicates": 100,
                "effect_grid": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            },
            "logging": {
                "level": "WARNING",
            },
        }

    @classmethod
    def _env(cls, name: str, path: str, cast_to):
        raw = os.getenv(name)
        if raw is not None and raw != "":
            return cast_to(raw)
        return cast_to(cls.get(path))

    # Configuration properties as class methods
    @classmethod
    def INNER_TOL(cls) -> float:
        return cast(float, cls._env("SMOOTH_INNER_TOL", "fit.inner_tol", float))

    @classmethod
    def MAX_ITER(cls) -> int:
        return cast(int, cls._env("SMOOTH_MAX_ITER", "fit.max_iter", int))

    @classmethod
    def OUTER_TOL(cls) -> float:
        return cast(float, cls._env("SMOOTH_OUTER_TOL", "fit.outer_tol", float))

    @classmethod
    def OUTER_MAX_ITER(cls) -> int:
        return cast(int, cls._env("SMOOTH_OUTER_MAX_ITER", "fit.outer_max_iter", int))

    @classmethod
    def SEED(cls) -> int:
        return cast(int, cls._env("SMOOTH_SEED", "fit.seed", int))

    @classmethod
    def DROP_TOL(cls) -> float:
        return float(cls.get("outer.drop_tol", 1e-4))

    @classmethod
    def THREADS(cls) -> int:
        return max(1, cast(int, cls._env("SMOOTH_THREADS", "experiment.threads", int)))

    @classmethod
    def LOG_LEVEL(cls) -> str:
        return os.getenv("SMOOTH_LOG_LEVEL", str(cls.get("logging.level", "WARNING"))).upper()

    @classmethod
    def fit_defaults(cls) -> Dict[str, Any]:
        """Fit options in the shape FitOptions.from_mapping expects"""
        return {
            "inner_tol": cls.INNER_TOL(),
            "max_iter": cls.MAX_ITER(),
            "outer_tol": cls.OUTER_TOL(),
            "outer_max_iter": cls.OUTER_MAX_ITER(),
            "seed": cls.SEED(),
            "drop_tol": cls.DROP_TOL(),
        }

    @classmethod
    def get(cls, path: str, default: Any = None) -> Any:
        """Get configuration value by dot-separated path"""
        keys = path.split(".")
        value = cls._load_config()

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                defaults: Any = cls._get_default_config()
                for k in keys:
                    if isinstance(defaults, dict) and k in defaults:
                        defaults = defaults[k]
                    else:
                        return default
                return defaults

        return value

    @classmethod
    def validate_config(cls) -> List[str]:
        """Validate configuration and return list of issues"""
        issues = []

        for name, accessor in (("inner_tol", cls.INNER_TOL), ("outer_tol", cls.OUTER_TOL)):
            try:
                if accessor() <= 0:
                    issues.append(f"{name} must be positive")
            except (TypeError, ValueError):
                issues.append(f"{name} is not a number")

        for name, accessor in (("max_iter", cls.MAX_ITER), ("outer_max_iter", cls.OUTER_MAX_ITER), ("threads", cls.THREADS)):
            try:
                if accessor() < 1:
                    issues.append(f"{name} must be at least 1")
            except (TypeError, ValueError):
                issues.append(f"{name} is not an integer")

        drop_tol = cls.get("outer.drop_tol", 1e-4)
        if not isinstance(drop_tol, (int, float)) or drop_tol <= 0:
            issues.append("Invalid outer.drop_tol")

        return issues

    @classmethod
    def save_config(cls, config_data: Dict) -> bool:
        """Save configuration to file"""
        try:
            config_path = os.getenv("CONFIG_PATH", "config.json")
            with open(config_path, "w") as f:
                json.dump(config_data, f, indent=2)
            # Clear cached config so next access reloads from file
            cls._config_data = None
            return True
        except OSError:
            return False

    @classmethod
    def reload(cls) -> None:
        cls._config_data = None


class Config(ConfigLegacy):
    """Runtime configuration

    Environment overrides (a .env file is honoured by main.py):
    - SMOOTH_INNER_TOL, SMOOTH_MAX_ITER: inner Newton/PIRLS tolerance and cap
    - SMOOTH_OUTER_TOL, SMOOTH_OUTER_MAX_ITER: outer Newton tolerance and cap
    - SMOOTH_SEED: default seed for simulation and experiments
    - SMOOTH_THREADS: worker processes for aic-experiment
    - SMOOTH_LOG_LEVEL: root log level
    """

    DEBUG = False
    TESTING = False


# Environment-specific configurations
class DevelopmentConfig(Config):
    """Development configuration"""

    DEBUG = True
    TESTING = False

    @classmethod
    def LOG_LEVEL(cls) -> str:
        return os.getenv("SMOOTH_LOG_LEVEL", "INFO").upper()


class ProductionConfig(Config):
    """Production configuration"""

    DEBUG = False
    TESTING = False


class TestingConfig(Config):
    """Testing configuration"""

    DEBUG = True
    TESTING = True

    @classmethod
    def THREADS(cls) -> int:
        return 1  # Replicates run in-process under test

    @classmethod
    def _load_config(cls) -> Dict:
        # Tests never depend on a config.json in the working directory
        if os.getenv("CONFIG_PATH") is None:
            return cls._get_default_config()
        return super()._load_config()


def get_config() -> type[Config]:
    """Get configuration based on environment"""
    env = os.getenv("SMOOTH_ENV", "production")

    if env == "development":
        return DevelopmentConfig
    elif env == "testing":
        return TestingConfig
    else:
        return ProductionConfig
