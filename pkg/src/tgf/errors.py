"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad or insufficient input,
CLI exit code 2) and :class:`NumericError` (degenerate statistics, divergence,
CLI exit code 3).
"""


class TGFError(Exception):
    """Base class for all package errors."""


class DataError(TGFError):
    pass


class NumericError(TGFError):
    pass


class SchemaViolation(DataError):
    pass


class DuplicateTicker(DataError):
    pass


class MissingTicker(DataError):
    pass


class EmptyPanel(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class BadWindow(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class AlignmentError(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptySequence(DataError):
    pass


class DegenerateSeries(NumericError):
    pass


class DegenerateSample(NumericError):
    pass


class DivergenceDetected(NumericError):
    pass


class ShapeError(NumericError):
    pass


class TapeConsumed(NumericError):
    pass
