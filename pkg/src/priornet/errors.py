"""Exception types. Each CLI-facing family carries the process exit code."""


class PriorNetError(Exception):
    exit_code = 1


class UsageError(PriorNetError):
    exit_code = 1


class ShapeError(PriorNetError, ValueError):
    """Incompatible tensor or image extents."""

    exit_code = 1


class InputTooSmallError(ShapeError):
    pass


class DataIOError(PriorNetError, OSError):
    exit_code = 2


class FormatError(PriorNetError, ValueError):
    exit_code = 3


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class MaxvalError(FormatError):
    pass


class WeightShapeError(FormatError):
    """Weight file records disagree with the configuration they declare."""


class ConfigError(FormatError):
    pass


class NumericalAbort(PriorNetError, FloatingPointError):
    exit_code = 4
