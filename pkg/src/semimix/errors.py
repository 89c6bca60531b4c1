"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` so the command line
can report failures as ``error: <kind>: <message>``.
"""


class SemimixError(Exception):
    kind = "error"


class InputError(SemimixError, ValueError):
    kind = "input"


class DomainError(SemimixError, ValueError):
    kind = "domain"


class EstimationError(SemimixError, ArithmeticError):
    kind = "estimation"


class DegenerateVarianceError(EstimationError):
    kind = "degenerate-variance"


class NumericalError(SemimixError, ArithmeticError):
    kind = "numerical"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class UndefinedStatisticError(SemimixError, ArithmeticError):
    kind = "undefined-statistic"
