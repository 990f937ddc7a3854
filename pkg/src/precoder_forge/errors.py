"""Exception types raised across the package."""


class PrecoderForgeError(Exception):
    """Base class for all package errors."""


class UnsupportedOrder(PrecoderForgeError, ValueError):
    pass


class IndexOutOfRange(PrecoderForgeError, IndexError):
    pass


class UnknownChannel(PrecoderForgeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""



class InvalidCorrelation(PrecoderForgeError, ValueError):
    pass


class ParseError(PrecoderForgeError, ValueError):
    """Channel file could not be parsed; carries the offending position."""

    def __init__(self, msg, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        super().__init__(msg + where)


class DimensionMismatch(PrecoderForgeError, ValueError):
    pass


class NumericalFailure(PrecoderForgeError, ArithmeticError):
    pass


class NonFinite(NumericalFailure):
    pass


class BudgetExceeded(PrecoderForgeError, RuntimeError):
    pass


class GroupBudgetExceeded(BudgetExceeded):
    pass


class QuadratureOverflow(PrecoderForgeError, OverflowError):
    pass


class NotSquare(DimensionMismatch):
    pass


class SingularSystem(NumericalFailure):
    pass


class LineSearchStalled(PrecoderForgeError, RuntimeError):
    """Both line searches of an iteration failed to find an ascent step."""


class InvalidGroupSize(PrecoderForgeError, ValueError):
    pass
