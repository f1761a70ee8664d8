"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value, dimension mismatch, or missing input."""


class ParseError(ValueError):
    """Malformed config or CSV input; the message carries the line number."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence limit."""
