"""Exception types shared across the package."""


class PrivstreamError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PrivstreamError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class AccountingError(PrivstreamError, ValueError):
    """A privacy-budget accounting operation received invalid input."""


class SequencingError(PrivstreamError, RuntimeError):
    """A recursive state update was applied out of order."""


class StateError(PrivstreamError, RuntimeError):
    """An operation was queried on a state that is not yet defined."""


class ParseError(PrivstreamError, ValueError):
    """Structured text (CSV / config / cached table) failed to parse.

    Carries enough location context to point at the offending cell.
    """

    def __init__(self, message, *, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(PrivstreamError, ValueError):
    """A run configuration is malformed or contains unknown keys."""
