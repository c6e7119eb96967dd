"""Sequential block Cholesky of a block-tridiagonal-arrow matrix.

This is the single-threaded baseline: a lower block-bidiagonal factor plus a
dense arrow row, computed stage by stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels as K
from .btam import BlockTridiagArrowMatrix, BlockVector, check, conforms
from .errors import DimensionError, NotPositiveDefiniteError
from .kernels import FlopCounter


@dataclass
class SequentialFactor:
    """``L`` with ``L L^T = Psi``.

    ``diag[i]`` is lower triangular, ``sub[i]`` is the block below it,
    ``arrow[i]`` the global row and ``corner`` the factored global block.
    """

    diag: list
    sub: list
    arrow: list | None
    corner: np.ndarray | None

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(d.shape[0] for d in self.diag)

    @property
    def global_size(self) -> int:
        return 0 if self.corner is None else self.corner.shape[0]

    def to_dense(self) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.stage_sizes)]).astype(int)
        n = off[-1] + self.global_size
        L = np.zeros((n, n))
        for i, d in enumerate(self.diag):
            L[off[i] : off[i + 1], off[i] : off[i + 1]] = d
        for i, s in enumerate(self.sub):
            L[off[i + 1] : off[i + 2], off[i] : off[i + 1]] = s
        if self.corner is not None:
            g = off[-1]
            L[g:, g:] = self.corner
            for i, a in enumerate(self.arrow):
                L[g:, off[i] : off[i + 1]] = a
        return L


def factorize_sequential(m: BlockTridiagArrowMatrix, counter: FlopCounter | None = None) -> SequentialFactor:
    """Block Cholesky, stage by stage.

    Raises :class:`NotPositiveDefiniteError` naming the failing stage (or the
    global block).
    """
    check(m)
    M = m.num_stages
    has_g = m.corner is not None
    diag: list = [None] * M
    sub: list = [None] * (M - 1)
    arrow: list | None = [None] * M if has_g else None

    D = m.diag[0]
    G = m.arrow[0] if has_g else None
    corner_acc = m.corner.copy() if has_g else None
    for i in range(M):
        try:
            Lii = K.chol_lower(D, counter)
        except NotPositiveDefiniteError as exc:
            raise exc.located(f"stage {i}") from None
        diag[i] = Lii
        if has_g:
            Lg = K.solve_right_transposed(G, Lii, counter)
            arrow[i] = Lg
            corner_acc = K.sym_downdate(corner_acc, Lg, counter)
        if i < M - 1:
            Ls = K.solve_right_transposed(m.sub[i], Lii, counter)
            sub[i] = Ls
            D = K.sym_downdate(m.diag[i + 1], Ls, counter)
            if has_g:
                G = K.mul_sub(m.arrow[i + 1], arrow[i], Ls.T, counter)

    corner = None
    if has_g:
        try:
            corner = K.chol_lower(corner_acc, counter)
        except NotPositiveDefiniteError as exc:
            raise exc.located("global block") from None
    return SequentialFactor(diag, sub, arrow, corner)


def solve_sequential(f: SequentialFactor, r: BlockVector, counter: FlopCounter | None = None) -> BlockVector:
    """Forward then backward substitution with a :class:`SequentialFactor`."""
    if r.stage_sizes != f.stage_sizes or r.global_size != f.global_size:
        raise DimensionError("right-hand side does not conform to the factor")
    M = len(f.diag)
    has_g = f.corner is not None

    y: list = [None] * M
    cur = r.stages[0]
    yg = r.glob.copy() if has_g else None
    for i in range(M):
        y[i] = K.tri_solve_forward(f.diag[i], cur, counter)
        if has_g:
            yg = K.mat_vec_sub(yg, f.arrow[i], y[i], counter)
        if i < M - 1:
            cur = K.mat_vec_sub(r.stages[i + 1], f.sub[i], y[i], counter)

    xg = None
    if has_g:
        yg = K.tri_solve_forward(f.corner, yg, counter)
        xg = K.tri_solve_backward(f.corner, yg, counter)
    x: list = [None] * M
    for i in range(M - 1, -1, -1):
        acc = y[i]
        if has_g:
            acc = K.mat_vec_sub(acc, f.arrow[i].T, xg, counter)
        if i < M - 1:
            acc = K.mat_vec_sub(acc, f.sub[i].T, x[i + 1], counter)
        x[i] = K.tri_solve_backward(f.diag[i], acc, counter)
    return BlockVector(x, xg)


def solve_dense_oracle(dense, r) -> np.ndarray:
    """Dense Cholesky solve, used as the reference in tests."""
    dense = np.asarray(dense, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    try:
        c = cho_factor(dense, lower=True)
    except np.linalg.LinAlgError as exc:
        # scipy reports the order of the failing leading minor in the message
        digits = [int(t) for t in str(exc).replace("-", " ").split() if t.isdigit()]
        raise NotPositiveDefiniteError(digits[0] - 1 if digits else -1, "dense oracle") from None
    return cho_solve(c, r)


def sequential_solve(m: BlockTridiagArrowMatrix, r: BlockVector) -> BlockVector:
    """Convenience wrapper: factorize and solve."""
    if not conforms(m, r):
        raise DimensionError("right-hand side does not conform to the matrix")
    return solve_sequential(factorize_sequential(m), r)
