"""Exception types shared across the package."""


class SwaveLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SwaveLabError):
    """A configuration value is missing, malformed, or out of range."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvalidFieldError(SwaveLabError):
    """A coefficient field violates a structural invariant (e.g. asymmetry)."""


class EllipticityError(SwaveLabError):
    """The principal coefficient matrix is not positive definite somewhere."""


class DataError(SwaveLabError):
    """Initial or observed data violates a precondition."""


class UnsupportedModeError(SwaveLabError):
    """The requested operation does not support the supplied coefficient mode."""


class UndefinedRatioError(SwaveLabError):
    """A ratio was requested with a vanishing denominator."""


class ConstructionError(SwaveLabError):
    """A manufactured object (bump, profile) violates its support constraints."""


class EmptyStudyError(SwaveLabError):
    """A statistical study was requested with no admissible samples."""
