"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class ContractError(ValueError):
    """An API precondition was violated by the caller."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class DomainError(ValueError):
    """A numeric argument lies outside the function's domain."""


class FormatError(ValueError):
    """A file or document does not match its expected format."""


class CheckpointError(FormatError):
    """A checkpoint document is unreadable or version-incompatible."""


class FitError(ValueError):
    """A model fit could not be performed on the given data."""
