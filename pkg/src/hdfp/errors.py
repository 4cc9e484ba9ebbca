"""Exception types shared across the package."""


class HdfpError(Exception):
    """Base class for package errors."""


class ConfigError(HdfpError):
    """Invalid configuration, arguments, or input data (CLI exit code 2)."""


class NumericalError(HdfpError):
    """Numerical failure at run time, e.g. a singular system (CLI exit code 1)."""
