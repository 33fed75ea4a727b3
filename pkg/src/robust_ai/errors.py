"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class RobustAIError(Exception):
    """Base class for all package errors."""


class ConfigError(RobustAIError, ValueError):
    pass


class DataError(RobustAIError, ValueError):
    pass


class NumericError(RobustAIError, ArithmeticError):
    pass


# data problems
class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class ParseError(DataError):
    def __init__(self, row, column, value=None):
        super().__init__(f"cannot parse row {row}, column {column!r}: {value!r}")
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class BurnInTooLarge(DataError):
    pass


class BurnInTooSmall(DataError):
    pass


class EmptyBurnIn(DataError):
    pass


class KTooLarge(DataError):
    pass


class MissingLabelAtSampledUnit(DataError):
    def __init__(self, rows):
        rows = [int(r) for r in rows]
        shown = ", ".join(map(str, rows[:20])) + (" ..." if len(rows) > 20 else "")
        super().__init__(f"sampled rows without labels: {shown}")
        self.rows = rows


# configuration problems
class RhoOutOfRange(ConfigError):
    pass


# numerical failures
class InfeasibleBudget(NumericError):
    pass


class AllZeroWeights(NumericError):
    pass


class SingularHessian(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class NoConvergence(NumericError):
    def __init__(self, iterations, grad_norm):
        super().__init__(f"no convergence after {iterations} iterations (|grad|={grad_norm:.3g})")
        self.iterations = iterations
        self.grad_norm = grad_norm


class NonpositiveVariance(NumericError):
    pass
