"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data and file-format problems exit 2, numeric failures exit 3.
"""


class EmiregError(Exception):
    """Base class for all package errors."""


class ShapeError(EmiregError, ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericError(EmiregError, ArithmeticError):
    """A computation produced NaN/Inf or an otherwise invalid number."""


class StateError(EmiregError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ConfigError(EmiregError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(EmiregError, ValueError):
    """Dataset-level violation: manifest, splits, placeholder policy."""


class FormatError(DataError):
    """Malformed binary file. Carries the byte offset of the violation."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
