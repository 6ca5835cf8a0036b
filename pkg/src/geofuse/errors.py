"""Exception types shared across the package."""


class GeofuseError(Exception):
    """Base class so callers can catch everything from this package at once."""


class ShapeError(GeofuseError, ValueError):
    """Tensor extents do not line up for the requested operation."""


class ConfigError(GeofuseError, ValueError):
    """Invalid or internally inconsistent configuration."""


class ContractError(GeofuseError, ValueError):
    """Caller broke an operation precondition (bad index, non-scalar loss, ...)."""


class NumericError(GeofuseError, ArithmeticError):
    """Singular or ill-conditioned numeric input."""


class GenerationError(GeofuseError, RuntimeError):
    """Scene synthesis could not satisfy its constraints within the attempt budget."""


class ValidationError(GeofuseError, ValueError):
    """External input (CSV row, score value, file header) failed validation."""
