"""Dense block kernels used by the structured factorizations.

Every kernel takes an optional :class:`FlopCounter` and charges the flop
count of the BLAS/LAPACK operation it stands for.  The counts are exact
rationals so that per-phase tallies can be compared with the closed-form
flop model without tolerances.

Blocks are plain float64 numpy arrays.  For symmetric inputs only the lower
triangle is read by :func:`chol_lower`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction

import numpy as np
from scipy.linalg import blas, lapack

from .errors import DimensionError, NotPositiveDefiniteError, SingularFactorError

# Pivots at or below this value are treated as a definiteness failure.
PIVOT_FLOOR = 1e-300

_ZERO = Fraction(0)


@dataclass
class FlopCounter:
    """Per-category flop tallies (exact rationals)."""

    potrf: Fraction = field(default=_ZERO)
    trsm: Fraction = field(default=_ZERO)
    syrk: Fraction = field(default=_ZERO)
    gemm: Fraction = field(default=_ZERO)
    trsv: Fraction = field(default=_ZERO)
    gemv: Fraction = field(default=_ZERO)

    @property
    def total(self) -> Fraction:
        return self.potrf + self.trsm + self.syrk + self.gemm + self.trsv + self.gemv

    def __iadd__(self, other: "FlopCounter") -> "FlopCounter":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "FlopCounter") -> "FlopCounter":
        out = FlopCounter()
        out += self
        out += other
        return out

    def as_dict(self) -> dict[str, Fraction]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


def _as_block(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D block, got shape {a.shape}")
    return a


def _as_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {x.shape}")
    return x


def _check_diagonal(L: np.ndarray) -> None:
    if L.shape[0] != L.shape[1]:
        raise DimensionError(f"triangular factor must be square, got {L.shape}")
    d = np.diagonal(L)
    if not np.all(d != 0.0):
        raise SingularFactorError(
            f"zero diagonal entry in triangular factor at row {int(np.flatnonzero(d == 0.0)[0])}"
        )


def chol_lower(A, counter: FlopCounter | None = None, *, where: str | None = None) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == A`` (potrf, b^3/3 flops).

    Only the lower triangle of ``A`` is referenced.  Raises
    :class:`NotPositiveDefiniteError` carrying the first failing row.
    """
    A = _as_block(A, "A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionError(f"chol_lower needs a square block, got {A.shape}")
    if n == 0:
        return np.zeros((0, 0))
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1, where)
    if info < 0:
        raise DimensionError(f"dpotrf rejected argument {-info}")
    d = np.diagonal(L)
    bad = np.flatnonzero(~(d * d > PIVOT_FLOOR))
    if bad.size:
        raise NotPositiveDefiniteError(int(bad[0]), where)
    if counter is not None:
        counter.potrf += Fraction(n**3, 3)
    return L


def solve_right_transposed(B, L, counter: FlopCounter | None = None) -> np.ndarray:
    """Return ``X`` with ``X @ L.T == B`` for lower-triangular ``L`` (trsm)."""
    B = _as_block(B, "B")
    L = _as_block(L, "L")
    _check_diagonal(L)
    m, b = B.shape
    if b != L.shape[0]:
        raise DimensionError(f"trsm: B is {B.shape} but L is {L.shape}")
    if counter is not None:
        counter.trsm += m * b * b
    if m == 0 or b == 0:
        return np.zeros((m, b))
    return blas.dtrsm(1.0, L, B, side=1, lower=1, trans_a=1)


def sym_downdate(C, X, counter: FlopCounter | None = None) -> np.ndarray:
    """``C - X @ X.T`` (syrk, n^2 m flops)."""
    C = _as_block(C, "C")
    X = _as_block(X, "X")
    n, m = X.shape
    if C.shape != (n, n):
        raise DimensionError(f"syrk: C is {C.shape} but X is {X.shape}")
    if counter is not None:
        counter.syrk += n * n * m
    return C - X @ X.T


def mul_sub(C, A, B, counter: FlopCounter | None = None) -> np.ndarray:
    """``C - A @ B`` (gemm, 2 rows inner cols flops)."""
    C = _as_block(C, "C")
    A = _as_block(A, "A")
    B = _as_block(B, "B")
    if A.shape[1] != B.shape[0] or C.shape != (A.shape[0], B.shape[1]):
        raise DimensionError(f"gemm: C{C.shape} - A{A.shape} @ B{B.shape}")
    if counter is not None:
        counter.gemm += 2 * A.shape[0] * A.shape[1] * B.shape[1]
    return C - A @ B


def tri_solve_forward(L, r, counter: FlopCounter | None = None) -> np.ndarray:
    """Solve ``L y = r`` (trsv, b^2/2 flops)."""
    L = _as_block(L, "L")
    r = _as_vector(r, "r")
    _check_diagonal(L)
    if r.shape[0] != L.shape[0]:
        raise DimensionError(f"trsv: L is {L.shape} but r has length {r.shape[0]}")
    if counter is not None:
        counter.trsv += Fraction(L.shape[0] ** 2, 2)
    if r.shape[0] == 0:
        return r.copy()
    return blas.dtrsv(L, r, lower=1, trans=0)


def tri_solve_backward(L, y, counter: FlopCounter | None = None) -> np.ndarray:
    """Solve ``L.T x = y`` (trsv, b^2/2 flops)."""
    L = _as_block(L, "L")
    y = _as_vector(y, "y")
    _check_diagonal(L)
    if y.shape[0] != L.shape[0]:
        raise DimensionError(f"trsv: L is {L.shape} but y has length {y.shape[0]}")
    if counter is not None:
        counter.trsv += Fraction(L.shape[0] ** 2, 2)
    if y.shape[0] == 0:
        return y.copy()
    return blas.dtrsv(L, y, lower=1, trans=1)


def mat_vec_sub(y, A, x, counter: FlopCounter | None = None) -> np.ndarray:
    """``y - A @ x`` (gemv, 2 rows cols flops)."""
    y = _as_vector(y, "y")
    A = _as_block(A, "A")
    x = _as_vector(x, "x")
    if A.shape != (y.shape[0], x.shape[0]):
        raise DimensionError(f"gemv: y({y.shape[0]}) - A{A.shape} @ x({x.shape[0]})")
    if counter is not None:
        counter.gemv += 2 * A.shape[0] * A.shape[1]
    return y - A @ x
