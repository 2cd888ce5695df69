"""Exceptions shared across modules."""


class ConfigError(ValueError):
    """Inconsistent or out-of-range configuration."""


class InvariantViolation(AssertionError):
    """A simulator correctness invariant did not hold."""
