"""Exception hierarchy shared by every module."""


class HybridPinnError(Exception):
    pass


class StructuralError(HybridPinnError, ValueError):
    """Malformed input: wrong shapes, unknown identifiers, corrupt files."""


class DomainError(HybridPinnError, ValueError):
    """Argument outside the admissible range of an operation."""


class NumericalError(HybridPinnError, ArithmeticError):
    """Non-finite value produced during evaluation.

    ``point`` carries the offending sample (coordinates and time) when known.
    """

    def __init__(self, message, point=None, category=None):
        super().__init__(message)
        self.point = point
        self.category = category


class CheckpointError(StructuralError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ConfigError(HybridPinnError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class TrainingAborted(HybridPinnError):
    """Raised when training stops early; the partial history is attached."""

    def __init__(self, message, history=None, params=None):
        super().__init__(message)
        self.history = history
        self.params = params
