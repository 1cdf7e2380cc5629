"""Exception types shared across the package.

All derive from ValueError so callers that do not care about the precise
failure class can still catch a single built-in type.
"""


class AirflError(ValueError):
    """Base class for all package errors."""


class ConfigurationError(AirflError):
    """A run or component was configured with inconsistent parameters."""


class ValidationError(AirflError):
    """An input value violates an interface precondition."""


class ChannelError(AirflError):
    """A physically impossible channel quantity (e.g. nonpositive gain)."""


class DomainError(AirflError):
    """A closed-form expression was evaluated outside its domain."""
