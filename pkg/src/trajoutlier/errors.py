"""Exception hierarchy. Each class maps to one CLI exit code."""


class TrajOutlierError(Exception):
    exit_code = 1


class ConfigError(TrajOutlierError, ValueError):
    """Invalid configuration key, value, or usage."""

    exit_code = 1


class DataError(TrajOutlierError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(TrajOutlierError, ArithmeticError):
    """Non-finite loss or other numerical failure during training."""

    exit_code = 3
