"""Exception hierarchy. Every error raised by the package derives from FrailnetError."""


class FrailnetError(Exception):
    pass


class DataError(FrailnetError, ValueError):
    """Malformed input data; ``row`` and ``column`` locate the offending cell when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumn(DataError):
    pass


class NonPositiveTime(DataError):
    pass


class InvalidStatus(DataError):
    pass


class RaggedCovariates(DataError):
    pass


class IncompleteAssignment(DataError):
    pass


class ShapeMismatch(FrailnetError, ValueError):
    pass


class StaleTape(FrailnetError, RuntimeError):
    pass


class NonPositiveAlpha(FrailnetError, ValueError):
    pass


class NoEvents(FrailnetError, ValueError):
    pass


class BaselineUndefinedAtTime(FrailnetError, ValueError):
    pass


class CensoredRecordInBatch(FrailnetError, ValueError):
    pass


class UnknownClusterSize(FrailnetError, ValueError):
    pass


class UnknownCluster(FrailnetError, KeyError):
    pass


class NonFiniteLoss(FrailnetError, FloatingPointError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NoComparablePairs(FrailnetError, ValueError):
    pass


class EmptyGrid(FrailnetError, ValueError):
    pass


class BracketFailure(FrailnetError, RuntimeError):
    pass
