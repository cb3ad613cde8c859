"""Exception types raised across the package."""


class ThermoguardError(Exception):
    """Base class for all package errors."""


class ShapeError(ThermoguardError, ValueError):
    pass


class DegenerateInputError(ThermoguardError, ValueError):
    pass


class DomainError(ThermoguardError, ValueError):
    pass


class ParseError(ThermoguardError, ValueError):
    """Malformed file content. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class LengthError(ThermoguardError, ValueError):
    pass


class ConfigError(ThermoguardError, ValueError):
    """Bad configuration. Carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
        self.key = key
        self.line = line


class EmptyROIError(ThermoguardError, ValueError):
    pass


class UndefinedMetricError(ThermoguardError, ValueError):
    pass
