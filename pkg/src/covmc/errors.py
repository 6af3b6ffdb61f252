"""Exception hierarchy.

``DataError`` subclasses signal bad input (CLI exit code 2); ``NumericalError``
subclasses signal a numerical failure during fitting (CLI exit code 3).
"""


class CovmcError(Exception):
    pass


class DataError(CovmcError, ValueError):
    pass


class NumericalError(CovmcError, ArithmeticError):
    pass


class DuplicateEntry(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class UnknownCategory(DataError):
    pass


class EmptySplit(DataError):
    pass


class EmptyGroup(DataError):
    pass


class RankTooLarge(DataError):
    pass


class SeparationError(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class RankDeficientColumn(NumericalError):
    def __init__(self, column, cond=float("nan")):
        self.column = column
        self.cond = cond
        super().__init__(f"column {column}: gathered Gram matrix is ill-conditioned (cond={cond:.3g})")


class DegenerateMoments(NumericalError):
    pass
