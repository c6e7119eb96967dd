"""Exception types shared across the package."""

from __future__ import annotations


class ParKKTError(Exception):
    """Base class for all errors raised by parkkt."""


class DimensionError(ParKKTError, ValueError):
    """Block shapes do not conform."""


class NotPositiveDefiniteError(ParKKTError, ArithmeticError):
    """A Cholesky pivot was not positive.

    ``row`` is the failing row inside the block being factored, ``where``
    describes which block of the larger system it was (stage, segment, ...).
    """

    def __init__(self, row: int, where: str | None = None):
        self.row = row
        self.where = where
        msg = f"not positive definite: non-positive pivot at block row {row}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)

    def located(self, where: str) -> "NotPositiveDefiniteError":
        return NotPositiveDefiniteError(self.row, where)


class SingularFactorError(ParKKTError, ArithmeticError):
    """A triangular factor has a zero on its diagonal."""


class PlanError(ParKKTError, ValueError):
    """A partition plan is infeasible or inconsistent with the matrix."""


class FormatError(ParKKTError, ValueError):
    """A matrix, vector or track file could not be parsed."""
