"""Exception types shared across the package."""


class TDCRError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TDCRError, ValueError):
    pass


class CapacityError(TDCRError, ValueError):
    """Problem too large for the exact solver."""


class DegenerateInputError(TDCRError, ValueError):
    pass


class EmptyResultError(TDCRError, ValueError):
    """An operation removed every point."""


class DataValidationError(TDCRError):
    """A dataset or manifest violates an invariant."""


class ManifestParseError(DataValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WeightFileError(TDCRError):
    pass


class MagicMismatchError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass
