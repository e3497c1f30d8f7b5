"""Shared exception types."""


class StridetestError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(StridetestError):
    """Invalid invocation: bad arguments, mismatched inputs, unknown ids."""


class SutDownError(StridetestError):
    """The system under test is unreachable or failed a liveness probe."""
