"""Exception types shared across the package."""


class CurveblocksError(Exception):
    """Base class for package-specific errors."""


class ConfigError(CurveblocksError):
    """Invalid configuration, model specification, or parameter vector."""


class DataError(CurveblocksError):
    """Malformed input data or a preprocessing domain violation."""


class NumericError(CurveblocksError):
    """A numeric computation produced a non-finite result."""


class DomainError(CurveblocksError, ValueError):
    """Evaluation time outside the spline domain."""


class ShapeError(CurveblocksError, ValueError):
    """Array arguments with inconsistent dimensions."""
