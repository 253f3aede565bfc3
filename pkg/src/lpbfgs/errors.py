"""Exception types raised across the package."""


class LpbfgsError(Exception):
    """Base class for all package errors."""


class UsageError(LpbfgsError, ValueError):
    """Bad arguments: out-of-range budgets, unknown option names, length mismatches."""


class ShapeError(UsageError):
    """Input dimensions do not match the model or each other."""


class ModelFormatError(LpbfgsError, ValueError):
    """A model or image file could not be parsed or failed validation."""


class TrainingError(LpbfgsError, RuntimeError):
    pass


class NumericError(LpbfgsError, ArithmeticError):
    """A NaN or infinity showed up where a finite value is required."""


class NotDescentDirection(LpbfgsError, ValueError):
    pass


class LineSearchError(LpbfgsError, RuntimeError):
    pass


class CurvatureSkip(LpbfgsError, ArithmeticError):
    """s.y fell below the curvature floor; the inverse Hessian should be kept."""


class RejectedInput(LpbfgsError, ValueError):
    """The model already misclassifies the input, so there is nothing to attack."""


class EvaluationError(LpbfgsError, RuntimeError):
    pass
