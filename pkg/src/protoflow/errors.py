"""Exception hierarchy.

Each family maps to one CLI exit code (see ``protoflow.cli``).
"""


class ProtoflowError(Exception):
    """Base class for all package errors."""


class ConfigError(ProtoflowError, ValueError):
    """Invalid configuration value or combination."""


class DataError(ProtoflowError, ValueError):
    """Malformed, missing or inconsistent data."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class ShapeError(DataError):
    pass


class DomainError(ProtoflowError, ValueError):
    """Query outside the region where a field is defined."""


class DivergenceError(ProtoflowError, ArithmeticError):
    """Non-finite value produced by an iterative procedure."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class AccountingError(ProtoflowError, AssertionError):
    """Recorded function-evaluation count disagrees with the closed form."""
