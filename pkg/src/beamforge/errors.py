"""Exception hierarchy.

The CLI maps these onto its exit codes, so library code raises the most
specific class that applies.
"""


class BeamforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(BeamforgeError, ValueError):
    """Invalid configuration or arguments (CLI exit code 2)."""


class DataError(BeamforgeError, ValueError):
    """Missing, malformed or inconsistent input data (CLI exit code 3)."""


class NumericalError(BeamforgeError, ArithmeticError):
    """Singular statistics, non-finite values, failed factorizations (CLI exit code 4)."""
