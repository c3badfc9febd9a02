"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class ContinaError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(ContinaError):
    """Invalid experiment configuration or CLI arguments."""

    exit_code = 2


class DataFormatError(ContinaError):
    """Malformed, inconsistent, or empty input data."""

    exit_code = 3


class EmptyCalibrationError(ContinaError):
    """A calibration window was queried or seeded with no scores."""

    exit_code = 4


class MissingForecastError(DataFormatError):
    """A file-backed forecast row is absent for a required (t, region, flow) cell."""

    exit_code = 5


class LedgerError(ContinaError):
    """A run ledger is structurally incomplete or inconsistent."""

    exit_code = 6


class NotFittedError(ContinaError):
    """An estimator was used before ``fit``."""

    exit_code = 1
