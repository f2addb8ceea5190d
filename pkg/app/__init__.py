"""
app/__init__.py
General smooth models: penalized likelihood regression with Laplace marginal likelihood smoothing selection
"""

import logging
import os
from typing import Optional, Union

__version__ = "1.0.0"

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: Optional[Union[int, str]] = None) -> None:
    """
    Configure root logging once for command line use.

    SMOOTH_LOG_LEVEL, when set, overrides the level passed in.
    """
    env_level = os.getenv("SMOOTH_LOG_LEVEL")
    if env_level:
        level = env_level.upper()
    if level is None:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


__all__ = ["__version__", "setup_logging", "LOG_FORMAT"]
