"""Exception hierarchy shared across the package."""


class MultistreamError(Exception):
    """Base class for all package errors."""


class DimensionError(MultistreamError, ValueError):
    pass


class NumericError(MultistreamError, ArithmeticError):
    pass


class GraphError(MultistreamError, RuntimeError):
    """Misuse of the autograd graph (non-scalar loss, double backward)."""


class ConfigError(MultistreamError, ValueError):
    pass


class InfeasibleConstraintError(MultistreamError, ValueError):
    """Semi-orthogonality requested on a matrix with more rows than columns."""


class UninitializedStatsError(MultistreamError, RuntimeError):
    """Batch-norm inference requested before any running statistics exist."""


class EmptyInputError(MultistreamError, ValueError):
    pass


class FormatError(MultistreamError, ValueError):
    """File does not follow the expected container layout."""


class CorruptionError(FormatError):
    """File is truncated or inconsistent; carries the failing byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
