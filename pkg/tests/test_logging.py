"""
tests/test_logging.py
Test cases for logging setup and fit progress messages
"""

import logging
import os

from app import LOG_FORMAT, setup_logging
from app.core.design import ModelConfig
from app.core.model import SmoothModel
from tests import BaseTestCase, SampleDataGenerator


class TestSetupLogging(BaseTestCase):
    """Test root logger configuration"""

    def tearDown(self):
        logging.basicConfig(level=logging.WARNING, force=True)
        super().tearDown()

    def test_level_argument(self):
        """Test the level passed in is applied with the package format"""
        setup_logging(logging.INFO)
        root = logging.getLogger()
        self.assertEqual(root.level, logging.INFO)
        self.assertEqual(root.handlers[0].formatter._fmt, LOG_FORMAT)

    def test_environment_override(self):
        """Test SMOOTH_LOG_LEVEL wins over the argument"""
        os.environ["SMOOTH_LOG_LEVEL"] = "debug"
        setup_logging(logging.ERROR)
        self.assertEqual(logging.getLogger().level, logging.DEBUG)

    def test_default_is_warning(self):
        """Test the default level"""
        setup_logging()
        self.assertEqual(logging.getLogger().level, logging.WARNING)


class TestFitMessages(BaseTestCase):
    """Test progress messages emitted while fitting"""

    def test_fit_logs_start_and_finish(self):
        """Test the model logger reports the problem size and the result"""
        raw = SampleDataGenerator.model_config("gaussian", [{"var": "x", "k": 6}])
        with self.assertLogs("app.core.model", level="INFO") as logs:
            SmoothModel(ModelConfig.from_dict(raw)).fit(SampleDataGenerator.smooth_gaussian(n=100))
        text = "\n".join(logs.output)
        self.assertIn("fitting gaussian model: n=100", text)
        self.assertIn("fit finished", text)

    def test_outer_iterations_are_logged(self):
        """Test the outer optimizer logs its trace at debug level"""
        raw = SampleDataGenerator.model_config("gaussian", [{"var": "x", "k": 6}])
        with self.assertLogs("app.core.outer_optimizer", level="DEBUG") as logs:
            SmoothModel(ModelConfig.from_dict(raw)).fit(SampleDataGenerator.smooth_gaussian(n=100))
        self.assertTrue(logs.output)
