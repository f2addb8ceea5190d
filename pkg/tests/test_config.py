"""
tests/test_config.py
Test cases for configuration settings
"""

import json
import os

from config.settings import (
    Config,
    DevelopmentConfig,
    ProductionConfig,
    TestingConfig,
    get_config,
)
from app.core.model import FitOptions
from tests import BaseTestCase


class TestConfigClass(BaseTestCase):
    """Test Config class and settings"""

    def test_fit_defaults(self):
        """Test default fit tolerances and caps"""
        self.assertEqual(TestingConfig.INNER_TOL(), 1e-7)
        self.assertEqual(TestingConfig.MAX_ITER(), 100)
        self.assertEqual(TestingConfig.OUTER_TOL(), 1e-6)
        self.assertEqual(TestingConfig.OUTER_MAX_ITER(), 200)
        self.assertEqual(TestingConfig.SEED(), 42)

    def test_fit_defaults_feed_fit_options(self):
        """Test the settings mapping is accepted by FitOptions"""
        options = FitOptions.from_mapping(TestingConfig.fit_defaults(), {"outer_tol": 1e-5})
        self.assertEqual(options.inner_tol, 1e-7)
        self.assertEqual(options.outer_tol, 1e-5)
        self.assertEqual(options.seed, 42)

    def test_drop_tolerance_reaches_the_optimizer(self):
        """Test outer.drop_tol is passed through fit options to the outer iteration"""
        self.assertEqual(TestingConfig.DROP_TOL(), 1e-4)
        options = FitOptions.from_mapping(TestingConfig.fit_defaults(), None)
        self.assertEqual(options.outer_options().drop_tol, 1e-4)
        options = FitOptions.from_mapping(TestingConfig.fit_defaults(), {"drop_tol": 1e-3})
        self.assertEqual(options.outer_options().drop_tol, 1e-3)

    def test_get_by_path(self):
        """Test dot-separated lookup with defaults"""
        self.assertEqual(TestingConfig.get("experiment.replicates"), 100)
        self.assertEqual(TestingConfig.get("experiment.effect_grid")[-1], 1.0)
        self.assertIsNone(TestingConfig.get("experiment.missing"))
        self.assertEqual(TestingConfig.get("no.such.key", "fallback"), "fallback")

    def test_validate_defaults(self):
        """Test the default configuration has no issues"""
        self.assertEqual(TestingConfig.validate_config(), [])


class TestEnvironmentOverrides(BaseTestCase):
    """Test SMOOTH_* environment variables"""

    def test_numeric_overrides(self):
        """Test tolerances, caps and seed from the environment"""
        os.environ["SMOOTH_INNER_TOL"] = "1e-9"
        os.environ["SMOOTH_MAX_ITER"] = "50"
        os.environ["SMOOTH_OUTER_TOL"] = "1e-8"
        os.environ["SMOOTH_OUTER_MAX_ITER"] = "20"
        os.environ["SMOOTH_SEED"] = "7"
        self.assertEqual(Config.INNER_TOL(), 1e-9)
        self.assertEqual(Config.MAX_ITER(), 50)
        self.assertEqual(Config.OUTER_TOL(), 1e-8)
        self.assertEqual(Config.OUTER_MAX_ITER(), 20)
        self.assertEqual(Config.fit_defaults()["seed"], 7)

    def test_threads(self):
        """Test worker count override, floor and the testing pin"""
        os.environ["SMOOTH_THREADS"] = "4"
        self.assertEqual(ProductionConfig.THREADS(), 4)
        self.assertEqual(TestingConfig.THREADS(), 1)
        os.environ["SMOOTH_THREADS"] = "0"
        self.assertEqual(ProductionConfig.THREADS(), 1)

    def test_log_level(self):
        """Test log level defaults and override"""
        self.assertEqual(TestingConfig.LOG_LEVEL(), "WARNING")
        self.assertEqual(DevelopmentConfig.LOG_LEVEL(), "INFO")
        os.environ["SMOOTH_LOG_LEVEL"] = "debug"
        self.assertEqual(TestingConfig.LOG_LEVEL(), "DEBUG")

    def test_invalid_values_are_reported(self):
        """Test validation of bad environment values"""
        os.environ["SMOOTH_INNER_TOL"] = "-1"
        os.environ["SMOOTH_MAX_ITER"] = "many"
        issues = TestingConfig.validate_config()
        self.assertIn("inner_tol must be positive", issues)
        self.assertIn("max_iter is not an integer", issues)


class TestGetConfig(BaseTestCase):
    """Test configuration selection by SMOOTH_ENV"""

    def test_environments(self):
        """Test each environment name"""
        self.assertIs(get_config(), TestingConfig)
        os.environ["SMOOTH_ENV"] = "development"
        self.assertIs(get_config(), DevelopmentConfig)
        os.environ["SMOOTH_ENV"] = "production"
        self.assertIs(get_config(), ProductionConfig)
        del os.environ["SMOOTH_ENV"]
        self.assertIs(get_config(), ProductionConfig)

    def test_flags(self):
        """Test DEBUG and TESTING flags"""
        self.assertTrue(TestingConfig.TESTING)
        self.assertTrue(DevelopmentConfig.DEBUG)
        self.assertFalse(ProductionConfig.DEBUG)
        self.assertFalse(ProductionConfig.TESTING)


class TestConfigFile(BaseTestCase):
    """Test reading and saving config.json"""

    def test_file_values_and_fallbacks(self):
        """Test file values win and missing keys fall back to defaults"""
        path = self.write_text(json.dumps({"fit": {"outer_tol": 1e-4}, "outer": {"drop_tol": 1e-3}}), "config.json")
        os.environ["CONFIG_PATH"] = path
        self.assertEqual(TestingConfig.OUTER_TOL(), 1e-4)
        self.assertEqual(TestingConfig.DROP_TOL(), 1e-3)
        self.assertEqual(TestingConfig.fit_defaults()["drop_tol"], 1e-3)
        self.assertEqual(TestingConfig.INNER_TOL(), 1e-7)

    def test_save_and_reload(self):
        """Test saving clears the cache so new values are read"""
        path = self.path("config.json")
        os.environ["CONFIG_PATH"] = path
        self.assertTrue(TestingConfig.save_config({"fit": {"seed": 11}}))
        self.assertEqual(TestingConfig.SEED(), 11)
        with open(path, "w") as f:
            json.dump({"fit": {"seed": 12}}, f)
        self.assertEqual(TestingConfig.SEED(), 11)
        TestingConfig.reload()
        self.assertEqual(TestingConfig.SEED(), 12)

    def test_save_failure(self):
        """Test an unwritable path is reported"""
        os.environ["CONFIG_PATH"] = self.path(os.path.join("missing", "config.json"))
        self.assertFalse(TestingConfig.save_config({}))

    def test_testing_ignores_working_directory_file(self):
        """Test testing settings use defaults without CONFIG_PATH"""
        self.assertEqual(TestingConfig._load_config(), TestingConfig._get_default_config())
