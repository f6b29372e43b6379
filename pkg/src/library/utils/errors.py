"""
Exceptions raised by the library
Each one subclasses the builtin a caller would otherwise expect, so `except ValueError` keeps working
"""


class GridMismatchError(ValueError):
    """Operands live on different cell grids"""


class ContractError(ValueError):
    """A precondition on the inputs of an operation does not hold"""


class SupportTooLargeError(ValueError):
    """Exhaustive enumeration was requested on a support larger than the configured cap"""

    def __init__(self, support: int, cap: int, what: str = "enumeration"):
        """
        :param support: number of support cells of the element
        :param cap: largest support allowed
        :param what: name of the refused operation, used in the message
        """
        super().__init__(f"{what} refused: support has {support} cells, cap is {cap} (sample instead)")
        self.support: int = support
        self.cap: int = cap


class NumericError(ArithmeticError):
    """Kernel evaluation overflowed or produced non-finite values"""


class UnsupportedOperationError(NotImplementedError):
    """The operator kind has no implementation of the requested operation"""


class GridTooCoarseError(RuntimeError):
    """No cell-level fragment is small enough, the grid has to be refined"""

    def __init__(self, message: str, min_norm: float, cell: int | None = None):
        """
        :param message: description of the failed requirement
        :param min_norm: smallest image norm that was achievable
        :param cell: offending cell index if a single cell is to blame
        """
        super().__init__(f"grid too coarse: {message} | minimal achieved norm {min_norm:.6g}")
        self.min_norm: float = min_norm
        self.cell: int | None = cell


class RoundingBoundError(AssertionError):
    """Rounding residual exceeded (dim/2)*max|v_i|, which can only be a bug"""


class NarrowSplitError(AssertionError):
    """A produced split does not satisfy defect < epsilon"""


class PropertyViolationError(AssertionError):
    """An invariant checked by an experiment pipeline or the selftest did not hold"""


class SpecError(ValueError):
    """Malformed experiment, operator or element specification"""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        """
        :param message: what is wrong
        :param field: dotted path of the offending field
        :param line: line number in the source file, if known
        """
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field: str | None = field
        self.line: int | None = line
