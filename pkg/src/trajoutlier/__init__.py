"""Trajectory outlier detection from semantic check-in streams."""

from .errors import ConfigError, DataError, NumericalError, TrajOutlierError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "TrajOutlierError", "__version__"]
