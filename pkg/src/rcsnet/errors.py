"""Exception types shared by every rcsnet module."""


class RCSNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RCSNetError):
    """Tensor shapes disagree with an operation's contract."""


class ParameterError(RCSNetError):
    """An argument value is outside its documented domain."""


class NumericError(RCSNetError):
    """An operation produced NaN or Inf from finite inputs."""


class ContractError(RCSNetError):
    """API misuse, e.g. calling backward on a non-scalar."""


class ConfigurationError(RCSNetError):
    """A run configuration is internally inconsistent."""


class ValidationError(RCSNetError):
    """Input data violates a documented invariant."""
