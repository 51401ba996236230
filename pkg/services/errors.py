class GestureError(Exception):
    """Base class for every error raised by the toolkit."""
    exit_code = 3


# =====================
# DATA ERRORS (exit code 2)
# =====================
class DataError(GestureError):
    exit_code = 2


class ConfigError(DataError, ValueError):
    def __init__(self, message, field_errors=None):
        super().__init__(message)
        self.field_errors = field_errors or {}


class UnknownGesture(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown gesture"


class MalformedLine(DataError, ValueError):
    pass


class OverlappingSegments(DataError, ValueError):
    pass


class EmptyTranscript(DataError, ValueError):
    pass


class RateMismatch(DataError, ValueError):
    pass


class SingleSubject(DataError, ValueError):
    pass


class AnchorOutOfRange(DataError, IndexError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class EmptySequence(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class MissingDump(DataError, FileNotFoundError):
    pass


class UnknownVideo(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown video"


class IOFailure(DataError, OSError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class MissingKey(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing key"


# =====================
# RUNTIME FAILURES (exit code 3)
# =====================
class RuntimeFailure(GestureError):
    exit_code = 3


class EmptyTrainSet(RuntimeFailure, ValueError):
    pass


class NonFiniteLoss(RuntimeFailure, FloatingPointError):
    pass


# =====================
# WARNINGS
# =====================
class ClassAbsent(UserWarning):
    """A vocabulary class has no anchor in a training fold."""
