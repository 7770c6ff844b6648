"""Exception types raised across the package.

The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`NumericError` subclasses to exit code 3.
"""


class HafError(Exception):
    pass


class DataError(HafError, ValueError):
    """Malformed or inconsistent input (files, labels, shapes)."""


class NumericError(HafError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class TaxonomyError(DataError):
    pass


class EmptyFile(TaxonomyError):
    pass


class NonUniformDepth(TaxonomyError):
    pass


class DuplicateLeaf(TaxonomyError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class LevelOutOfRange(DataError, IndexError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnknownLabel(DataError):
    pass


class RaggedRow(DataError):
    pass


class NonNumericFeature(DataError):
    pass


class InvalidConfig(DataError):
    pass


class RankListTooShort(DataError):
    pass


class SingleClass(DataError):
    pass


class NonFiniteInput(NumericError):
    pass


class NonFiniteEvaluation(NumericError):
    pass


class ZeroWeightRow(NumericError):
    pass


class DegenerateChildSum(NumericError):
    pass


class DivergedLoss(NumericError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
