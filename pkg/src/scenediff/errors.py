"""Exception types shared across the package.

Each maps onto one CLI exit code (see ``scenediff.cli``).
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class ShapeError(ValueError):
    """Tensor or array extents that do not agree."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A scene or config file could not be parsed.

    ``field`` names the offending key when one is known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class VersionError(DataError):
    """File declares a schema version this build does not read."""


class ValidationError(DataError):
    """Parsed data violates a domain invariant."""


class NumericError(ArithmeticError):
    """Non-finite value produced during a computation."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, step, term):
        super().__init__(f"non-finite loss at step {step} (term: {term})")
        self.step = step
        self.term = term


class StateError(RuntimeError):
    """Object used in a state that does not permit the operation."""
