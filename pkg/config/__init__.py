"""
config/__init__.py
Configuration package
"""

from .settings import Config, DevelopmentConfig, ProductionConfig, TestingConfig

__all__ = [
    "Config",
    "DevelopmentConfig",
    "ProductionConfig",
    "TestingConfig",
]
