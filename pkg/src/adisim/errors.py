"""Exception hierarchy shared by the whole package."""


class AdisimError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(AdisimError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ParameterError(AdisimError, ValueError):
    """A scalar parameter is outside its admissible range."""


class SamplingError(AdisimError, ValueError):
    """A discretization is too coarse for the requested evaluation."""


class NumericError(AdisimError, RuntimeError):
    """A computation produced non-finite values or diverged."""


class ConfigError(AdisimError, ValueError):
    """A run configuration is malformed (CLI exit code 2)."""


class DataError(AdisimError, ValueError):
    """An input file is missing, corrupt, or inconsistent (CLI exit code 3)."""
