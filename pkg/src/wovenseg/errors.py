"""Exception types raised across the package."""


class WovenSegError(Exception):
    """Base class for all package errors."""


class DataError(WovenSegError, ValueError):
    """Input data violates a contract (shapes, labels, ranges)."""


class ManifestError(DataError):
    """A manifest file could not be parsed or failed validation."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class GeometryOverflowError(DataError):
    """Requested weave does not fit inside the frame bounds."""


class InjectionError(DataError):
    """Requested error injection cannot be realized on the given stack."""
