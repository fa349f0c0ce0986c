"""Exception hierarchy shared by every stage of the pipeline."""


class GaitAAEError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GaitAAEError, ValueError):
    """Input data violates a precondition."""


class NumericError(GaitAAEError, ArithmeticError):
    """A computation produced a non-finite or undefined result."""


class DegenerateCloud(DataError):
    pass


class EmptyHistogram(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class InvalidParams(DataError):
    pass


class HistoryTooShort(DataError):
    pass


class SingleClass(DataError):
    pass


class SegmentTooLong(DataError):
    pass


class EmptySequence(DataError):
    pass


class VersionMismatch(DataError):
    """A binary file has the wrong magic bytes or format version."""


class ZeroMeanMeasure(NumericError):
    pass
