"""Exception taxonomy shared across the package.

Two families matter to callers: ``ValidationError`` covers bad inputs,
configs, and files (the CLI maps these to exit code 1), while
``NumericalError`` covers failures of the numerics themselves (exit code 2).
"""


class FairwhitenError(Exception):
    """Base class for all package errors."""


class ValidationError(FairwhitenError):
    """Invalid input data, configuration, or file content."""


class NumericalError(FairwhitenError):
    """A numerical routine failed (non-convergence, blow-up, bad pivot)."""


class DimensionMismatch(ValidationError):
    """Array shapes do not conform."""


class EmptyDataset(ValidationError):
    """A dataset or count table with zero samples."""


class LambdaOutOfRange(ValidationError):
    """Blend weight outside [0, 1]."""


class SpecInvalid(ValidationError):
    """Synthetic-data specification is unsatisfiable or inconsistent."""


class ParseError(ValidationError):
    """Malformed cell or value in an input file (reports the line)."""


class SchemaError(ValidationError):
    """Missing, extra, or misnamed column/field in an input file."""


class EmptyGroupCell(ValidationError):
    """A (target, bias) cell required by the computation has no samples."""

    def __init__(self, y: int, b: int, context: str = ""):
        self.y = int(y)
        self.b = int(b)
        detail = f" ({context})" if context else ""
        super().__init__(f"group cell (y={self.y}, b={self.b}) is empty{detail}")


class EmptyBiasGroup(ValidationError):
    """A bias group required for a conditional probability has no samples."""

    def __init__(self, b: int):
        self.b = int(b)
        super().__init__(f"bias group b={self.b} has no records")


class EmptyConditionCell(ValidationError):
    """A (Y=y, B=b) conditioning cell has no records."""

    def __init__(self, y: int, b: int):
        self.y = int(y)
        self.b = int(b)
        super().__init__(f"conditioning cell (Y={self.y}, B={self.b}) has no records")


class NonConvergence(NumericalError):
    """Iterative eigensolver exhausted its sweep budget."""

    def __init__(self, sweeps: int, off_norm: float, tol: float):
        self.sweeps = int(sweeps)
        self.off_norm = float(off_norm)
        self.tol = float(tol)
        super().__init__(
            f"eigensolver did not converge after {self.sweeps} sweeps "
            f"(off-diagonal norm {self.off_norm:.3e}, tolerance {self.tol:.3e})"
        )


class NotPositiveDefinite(NumericalError):
    """Matrix (after regularization) is not positive definite."""


class Diverged(NumericalError):
    """Iteration left its convergence region."""


class NonFiniteLoss(NumericalError):
    """Training loss became NaN/inf (typically a learning-rate blow-up)."""

    def __init__(self, step: int):
        self.step = int(step)
        super().__init__(f"loss became non-finite at step {self.step}")
