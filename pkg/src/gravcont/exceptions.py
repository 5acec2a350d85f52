"""Exception hierarchy for gravcont."""


class GravcontError(Exception):
    """Base class for all errors raised by this package."""


class InvalidGeometryError(GravcontError, ValueError):
    """Degenerate extent, overlapping planes or otherwise unusable layout."""


class InvalidDepthError(InvalidGeometryError):
    """Continuation plane not strictly below the observation surface."""


class SingularKernelError(GravcontError, ValueError):
    """Evaluation point closer to a source than the geometric tolerance."""


class ShapeError(GravcontError, ValueError):
    """Array dimensions do not agree."""


class DataError(GravcontError, ValueError):
    """Non-finite or otherwise invalid numerical input."""


class CapacityError(GravcontError, ValueError):
    """Problem too large for an exhaustive routine."""


class UsageError(GravcontError, ValueError):
    """Invalid call sequence or argument combination."""


class ConfigError(UsageError):
    """Invalid experiment configuration."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        parts = [message]
        if field is not None:
            parts.append(f"field={field!r}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__(" ".join(parts))


class FileFormatError(GravcontError, ValueError):
    """Input file exists but cannot be parsed (bad header, bad number, ragged row)."""
