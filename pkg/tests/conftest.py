"""
tests/conftest.py
Pytest configuration and fixtures
"""

import warnings

import numpy as np
import pytest


def pytest_configure(config):
    """Configure pytest with custom settings"""
    # Overflow in exp at extreme trial steps is handled by the step halving
    warnings.filterwarnings("ignore", category=RuntimeWarning)
    warnings.filterwarnings("ignore", category=DeprecationWarning)
    warnings.filterwarnings("ignore", category=FutureWarning)
    config.addinivalue_line("filterwarnings", "ignore::RuntimeWarning")


@pytest.fixture
def rng():
    """Seeded generator for function-style tests"""
    return np.random.default_rng(20240101)
