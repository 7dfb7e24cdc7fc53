"""Exception types shared across the package."""


class MgragError(Exception):
    """Base class for all package errors."""


class ParseError(MgragError):
    """Malformed input file. Carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(MgragError):
    """Invalid configuration value."""


class BuildError(MgragError):
    """Hierarchy construction failed."""


class IndexFormatError(MgragError):
    """Index file is unreadable: bad magic, version, or truncation."""


class RoutingError(MgragError):
    """No layer produced a usable score for a query."""


class EvalError(MgragError):
    """Evaluation could not produce a report."""
