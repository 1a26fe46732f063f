"""Exception types raised across the package."""


class RPFError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(RPFError):
    pass


class DimensionMismatch(RPFError, ValueError):
    pass


class ShapeMismatch(RPFError, ValueError):
    pass


class InvalidRotation(RPFError, ValueError):
    pass


class EmptySet(RPFError, ValueError):
    pass


class DegeneratePartition(RPFError):
    pass


class InvariantViolation(RPFError, ValueError):
    pass


class ParseError(RPFError):
    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class VersionMismatch(RPFError):
    pass


class NonFiniteLoss(RPFError, FloatingPointError):
    pass


class NonFiniteActivation(RPFError, FloatingPointError):
    pass


class InvalidGroupElement(RPFError, ValueError):
    pass


class ConfigError(RPFError):
    pass


class IoError(RPFError, OSError):
    pass
