"""Exception types raised across the package."""


class RepFaceError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(RepFaceError, ValueError):
    def __init__(self, what: str, got: int, expected: int):
        self.what = what
        self.got = got
        self.expected = expected
        super().__init__(f"{what}: dimension {got} does not match expected {expected}")


class LabelValidationError(RepFaceError, ValueError):
    """A soft label is not a probability distribution."""


class ConfigError(RepFaceError, ValueError):
    pass


class InvariantViolation(RepFaceError):
    pass


class NoHistoryError(RepFaceError, KeyError):
    """The memory bank holds no entry for the requested sample."""


class GenerationError(RepFaceError):
    pass


class DatasetFormatError(RepFaceError):
    """Base for dataset file problems."""


class HeaderError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


class DatasetValidationError(DatasetFormatError):
    pass


class NumericalError(RepFaceError, FloatingPointError):
    def __init__(self, message: str, epoch: int = -1, batch: int = -1, branches=()):
        self.epoch = epoch
        self.batch = batch
        self.branches = tuple(branches)
        super().__init__(message)
