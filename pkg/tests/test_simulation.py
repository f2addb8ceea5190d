"""
tests/test_simulation.py
Test cases for the simulation scenarios and the random effect AIC experiment
"""

import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.core.simulation import (
    CRITERIA,
    SCENARIOS,
    LATENT_CORRELATION,
    aic_experiment,
    covariates,
    experiment_data,
    simulate,
)
from tests import BaseTestCase


class TestSimulate(BaseTestCase):
    """Test the additive test-function scenarios"""

    def test_columns_and_truth(self):
        """Test the table layout and that the last test function is zero"""
        frame = simulate("gaussian", n=100, seed=1)
        self.assertEqual(
            list(frame.columns), ["x0", "x1", "x2", "x3", "f0", "f1", "f2", "f3", "eta", "y"]
        )
        self.assertEqual(len(frame), 100)
        np.testing.assert_array_equal(frame["f3"], np.zeros(100))
        np.testing.assert_allclose(frame["eta"], frame[["f0", "f1", "f2", "f3"]].sum(axis=1), rtol=1e-12)
        self.assertTrue(((frame[["x0", "x1", "x2", "x3"]] >= 0.0) & (frame[["x0", "x1", "x2", "x3"]] <= 1.0)).all().all())

    def test_seed_determinism(self):
        """Test the same seed reproduces identical tables"""
        a = simulate("poisson", n=50, noise=2, seed=7)
        b = simulate("poisson", n=50, noise=2, seed=7)
        self.assertEqual(a.to_csv(index=False), b.to_csv(index=False))
        c = simulate("poisson", n=50, noise=2, seed=8)
        self.assertFalse(np.array_equal(a["y"], c["y"]))

    def test_every_family_has_a_valid_response(self):
        """Test responses lie in each family's support"""
        for family in SCENARIOS:
            frame = simulate(family, n=200, noise=2, seed=3)
            y = frame["y"].to_numpy()
            self.assertTrue(np.all(np.isfinite(y)), msg=family)
            if family in ("poisson", "nb", "ziP", "ziplss"):
                np.testing.assert_array_equal(y, np.round(y))
                self.assertTrue(np.all(y >= 0.0), msg=family)
            elif family == "binomial":
                self.assertTrue(set(np.unique(y)) <= {0.0, 1.0})
            elif family == "beta":
                self.assertTrue(np.all((y > 0.0) & (y < 1.0)))
            elif family == "tw":
                self.assertTrue(np.all(y >= 0.0))
            elif family == "ocat":
                self.assertTrue(set(np.unique(y)) <= {1.0, 2.0, 3.0, 4.0})
            elif family == "coxph":
                self.assertIn("event", frame.columns)
                self.assertTrue(np.all(y > 0.0))
                self.assertGreater(frame["event"].mean(), 0.3)

    def test_exact_zeros(self):
        """Test zero-inflated and Tweedie responses contain exact zeros"""
        frame = simulate("ziP", n=500, noise=1, seed=2)
        self.assertGreater(float(np.mean(frame["y"] == 0.0)), 0.1)
        frame = simulate("tw", n=500, noise=1, seed=2)
        self.assertGreater(int(np.sum(frame["y"] == 0.0)), 0)

    def test_correlated_covariates(self):
        """Test correlated covariates are uniform with strong dependence"""
        x = covariates(5000, np.random.default_rng(0), correlated=True)
        self.assertEqual(x.shape, (5000, 4))
        self.assertTrue(np.all((x > 0.0) & (x < 1.0)))
        corr = np.corrcoef(x, rowvar=False)
        off = corr[~np.eye(4, dtype=bool)]
        self.assertTrue(np.all(off > 0.85) and np.all(off < 0.95))
        self.assertAlmostEqual(LATENT_CORRELATION, 0.9)
        np.testing.assert_allclose(x.mean(axis=0), 0.5, atol=0.03)

    def test_invalid_arguments(self):
        """Test unknown families, noise levels, sizes and scenarios"""
        with self.assertRaises(ConfigError):
            simulate("gamma")
        with self.assertRaises(ConfigError):
            simulate("gaussian", noise=4)
        with self.assertRaises(ConfigError):
            simulate("gaussian", n=0)
        with self.assertRaises(ConfigError):
            simulate("gaussian", scenario="other")


class TestAicExperiment(BaseTestCase):
    """Test the random effect selection experiment"""

    def test_experiment_data(self):
        """Test the grouping factor and the absent effect"""
        frame = experiment_data(0.0, 1, n=80, levels=8)
        self.assertEqual(len(frame), 80)
        self.assertEqual(sorted(frame["fac"].unique()), [float(j) for j in range(8)])
        self.assertTrue(np.all(frame["fac"].value_counts() == 10))

    def test_small_experiment_table(self):
        """Test the frequency table of a small run"""
        table = aic_experiment(effect_grid=(0.0, 2.0), replicates=2, seed=3, n=120, levels=10, k=6)
        self.assertEqual(list(table.columns), ["effect_sd", "criterion", "frequency", "replicates"])
        self.assertEqual(len(table), 2 * len(CRITERIA))
        self.assertEqual(table["criterion"].tolist()[:3], list(CRITERIA))
        self.assertTrue(table["frequency"].between(0.0, 1.0).all())
        self.assertTrue((table["replicates"] == 2).all())

    def test_replicate_count_must_be_positive(self):
        """Test replicate validation"""
        with self.assertRaises(ConfigError):
            aic_experiment(replicates=0)


@pytest.mark.slow
def test_worker_count_does_not_change_results():
    """Test process parallel replicates reproduce the serial table"""
    args = dict(effect_grid=(0.0, 1.0), replicates=3, seed=11, n=150, levels=10, k=6)
    serial = aic_experiment(workers=1, **args)
    parallel = aic_experiment(workers=2, **args)
    assert serial.equals(parallel)


def test_failed_replicates_are_left_out(mocker):
    """Test replicates that fail to fit are excluded from the frequencies"""
    outcome = {"conventional": True, "corrected": False, "tau1": True}
    replicate = mocker.patch("app.core.simulation._replicate", side_effect=[None, outcome, outcome, None])
    table = aic_experiment(effect_grid=(0.0,), replicates=4, seed=5)
    assert replicate.call_count == 4
    assert table["replicates"].tolist() == [2, 2, 2]
    assert table["frequency"].tolist() == [1.0, 0.0, 1.0]
