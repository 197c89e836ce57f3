"""Exception types shared across the package."""


class AgraError(Exception):
    """Base class for package errors."""


class ConfigError(AgraError, ValueError):
    """Invalid or incomplete configuration."""


class DimensionError(AgraError, ValueError):
    """Array shapes do not agree."""


class NumericError(AgraError, FloatingPointError):
    """Non-finite or out-of-range numeric input."""


class StateError(AgraError, RuntimeError):
    """Operation requires state that has not been initialised."""


class ParseError(AgraError, ValueError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class VersionError(AgraError):
    """Schema version or config hash mismatch."""
