"""
tests/__init__.py
Test package initialization with fixtures, sample data and finite difference helpers
"""

import os
import shutil
import sys
import tempfile
import unittest
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

MCYCLE_PATH = os.path.join(project_root, "app", "data", "mcycle.csv")


def _reset_settings() -> None:
    from config import settings

    for cls in (
        settings.ConfigLegacy,
        settings.Config,
        settings.DevelopmentConfig,
        settings.ProductionConfig,
        settings.TestingConfig,
    ):
        cls._config_data = None


class BaseTestCase(unittest.TestCase):
    """Base test case with a fixed seed, a scratch directory and the testing environment"""

    def setUp(self):
        """Set up test fixtures"""
        np.random.seed(42)
        self.test_dir = tempfile.mkdtemp(prefix="smooth-test-")
        self._saved_env = dict(os.environ)

        # Set test environment
        os.environ["SMOOTH_ENV"] = "testing"
        for name in list(os.environ):
            if name.startswith("SMOOTH_") and name != "SMOOTH_ENV":
                del os.environ[name]
        os.environ.pop("CONFIG_PATH", None)
        _reset_settings()

    def tearDown(self):
        """Clean up test fixtures"""
        os.environ.clear()
        os.environ.update(self._saved_env)
        _reset_settings()
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def path(self, name: str) -> str:
        return os.path.join(self.test_dir, name)

    def write_csv(self, frame: pd.DataFrame, name: str = "data.csv") -> str:
        target = self.path(name)
        frame.to_csv(target, index=False, float_format="%.17g")
        return target

    def write_text(self, text: str, name: str) -> str:
        target = self.path(name)
        with open(target, "w") as f:
            f.write(text)
        return target

    def assertPSD(self, matrix: np.ndarray, tol: float = 1e-9) -> None:
        """Smallest eigenvalue is not below -tol * largest magnitude"""
        sym = 0.5 * (matrix + matrix.T)
        ev = np.linalg.eigvalsh(sym)
        scale = max(float(np.max(np.abs(ev))), 1e-300)
        self.assertGreaterEqual(float(ev[0]), -tol * scale)


class SampleDataGenerator:
    """Generate sample data for testing"""

    @staticmethod
    def smooth_gaussian(n: int = 200, noise: float = 0.3, seed: int = 1) -> pd.DataFrame:
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=n)
        z = rng.uniform(size=n)
        y = np.sin(2.0 * np.pi * x) + 0.5 * z + rng.normal(0.0, noise, size=n)
        return pd.DataFrame({"x": x, "z": z, "y": y})

    @staticmethod
    def additive(family: str, n: int = 300, seed: int = 3, noise: int = 2) -> pd.DataFrame:
        from app.core.simulation import simulate

        return simulate(family=family, n=n, noise=noise, seed=seed)

    @staticmethod
    def survival(n: int = 200, seed: int = 5) -> pd.DataFrame:
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=n)
        eta = np.sin(2.0 * np.pi * x)
        t = rng.exponential(size=n) / np.exp(eta)
        c = rng.exponential(2.0, size=n)
        return pd.DataFrame({"x": x, "time": np.minimum(t, c), "event": (t <= c).astype(float)})

    @staticmethod
    def mcycle() -> pd.DataFrame:
        return pd.read_csv(MCYCLE_PATH)

    @staticmethod
    def model_config(
        family: str,
        smooths: List[Dict[str, Any]],
        response: str = "y",
        family_params: Optional[Dict[str, Any]] = None,
        extra_formulas: Optional[List[Dict[str, Any]]] = None,
        **formula: Any,
    ) -> Dict[str, Any]:
        first = {"response": response, "smooths": smooths}
        first.update(formula)
        return {
            "family": family,
            "family_params": family_params or {},
            "formulas": [first] + list(extra_formulas or []),
        }


# ----------------------------------------------------------------------------
# finite difference oracles
# ----------------------------------------------------------------------------


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function"""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of an array valued function; the new axis is last"""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(float(np.max(np.abs(exact))) if exact.size else 0.0, 1.0)
    return float(np.max(np.abs(approx - exact))) / scale if exact.size else 0.0


def working_problem(config_dict: Dict[str, Any], data: pd.DataFrame) -> Tuple[Any, Any, Any]:
    """
    Likelihood and penalties in working coordinates, as the model fits them.

    Returns (likelihood, working penalty structure, design).
    """
    from app.core.design import ModelConfig, assemble_design
    from app.core.families import get_family
    from app.core.likelihood import ObservationLikelihood
    from app.core.penalty_algebra import preprocess_blocks

    config = ModelConfig.from_dict(config_dict)
    family = get_family(config.family, config.family_params)
    design, structure = assemble_design(config, data, family.n_predictors, family.absorbs_intercept)
    working = preprocess_blocks(structure)
    T = working.transform_matrix()
    if family.is_general:
        lik = family.likelihood(design.X[0], design.offsets[0], design.y, design.event, design.weights)
    else:
        psi0 = family.initial_psi(design.y, design.weights)
        lik = ObservationLikelihood(family, design.X, design.offsets, design.y, design.weights, psi0, ~family.psi_fixed)
    return lik.transform(T), working, design


__all__ = [
    "BaseTestCase",
    "SampleDataGenerator",
    "MCYCLE_PATH",
    "fd_gradient",
    "fd_jacobian",
    "relative_error",
    "working_problem",
]
