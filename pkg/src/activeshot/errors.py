"""Exception types shared across the package."""


class ActiveShotError(Exception):
    """Base class for all package errors."""


class ShapeError(ActiveShotError):
    """Tensor shapes do not conform to the operation's contract."""


class NumericalError(ActiveShotError):
    """A forward computation produced NaN or Inf."""


class DataError(ActiveShotError):
    """Dataset is missing, malformed, or too small for the request."""


class ActionError(ActiveShotError):
    """An action index is outside the valid range."""


class FormatError(ActiveShotError):
    """A container file is truncated or not in the expected format."""


class ModelKindMismatchError(ActiveShotError):
    """A checkpoint holds a different model kind than the caller expects."""
