"""Exception hierarchy shared across the package."""


class PicError(Exception):
    """Base class for every error raised by picnet."""


class DimensionError(PicError, ValueError):
    pass


class NonFiniteError(PicError, FloatingPointError):
    pass


class ConfigError(PicError, ValueError):
    pass


class ValidationError(PicError, ValueError):
    pass


class UninitializedStatisticsError(PicError, RuntimeError):
    """Eval-mode batch norm was requested before any train-mode step."""


class FormatError(PicError, ValueError):
    """A container file is malformed or carries an unknown format version."""


class CompatibilityError(PicError, ValueError):
    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = diff or {}


class TrainingDiverged(PicError, RuntimeError):
    """Loss or gradients became non-finite; carries the last good state."""

    def __init__(self, message, last_good=None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history or []
