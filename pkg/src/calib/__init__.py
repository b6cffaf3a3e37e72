"""Risk-aware Bayesian calibration of dual-fuel engine fuelling settings.

The main entry points are :class:`calib.config.RunConfig`,
:func:`calib.loop.run_calibration` and the ``calib`` command line.
"""

from ._backend import BACKEND
from .config import ConfigError, RunConfig
from .loop import CalibrationRun, History, run_calibration

__version__ = "0.1.0"

__all__ = ["BACKEND", "CalibrationRun", "ConfigError", "History", "RunConfig", "run_calibration", "__version__"]
