"""Parallel Cholesky factorization and triangular solves on the permuted layout.

Each of the three routines is a fork-join: ``p`` tasks each touch only the
blocks of their own segment (plus the separator that precedes it), then a
single task runs the coupled separator/global part.  Cross-segment sums are
always reduced in ascending segment order, so results do not depend on
thread scheduling.
"""

from __future__ import annotations

from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import kernels as K
from .btam import (
    BlockTridiagArrowMatrix,
    BlockVector,
    PartitionPlan,
    SegmentedKKT,
    check,
    conforms,
    make_layout,
    permute_rhs,
    permuted_positions,
    unpermute_solution,
)
from .errors import DimensionError, NotPositiveDefiniteError, PlanError
from .kernels import FlopCounter


@dataclass
class PhaseFlops:
    """Flop tallies split per segment task and for the sequential phase."""

    segments: list[FlopCounter]
    sequential: FlopCounter = field(default_factory=FlopCounter)

    @classmethod
    def for_plan(cls, plan: PartitionPlan) -> "PhaseFlops":
        return cls([FlopCounter() for _ in range(plan.p)])

    @property
    def critical_path(self) -> Fraction:
        return max(c.total for c in self.segments) + self.sequential.total

    @property
    def total(self) -> Fraction:
        return sum((c.total for c in self.segments), Fraction(0)) + self.sequential.total


@dataclass
class ArrowFactor:
    """Lower factor of the permuted matrix, block by block.

    Per segment ``k``: ``D[k][i]`` (triangular), ``E[k][i]``, ``G[k][i]`` and,
    for ``k >= 1``, ``Bt[k][i]`` -- the block in separator ``k``'s row under
    interior stage ``i`` (nonzero for every ``i`` because of fill-in).
    ``F[k]`` sits in separator ``k+1``'s row under the last interior stage.
    Per separator ``k >= 1``: ``A[k]`` (triangular), ``Q[k]`` (global row) and,
    for ``1 <= k <= p-2``, the fill-in ``H[k]`` in separator ``k+1``'s row
    under separator ``k``.  ``R`` is the factored global block.
    """

    plan: PartitionPlan
    D: list
    E: list
    G: list | None
    Bt: list
    F: list
    A: list
    H: list
    Q: list | None
    R: np.ndarray | None

    @property
    def global_size(self) -> int:
        return 0 if self.R is None else self.R.shape[0]

    @property
    def block_size(self) -> int:
        return self.D[0][0].shape[0]

    def to_dense(self) -> np.ndarray:
        """Assemble the dense lower factor in permuted ordering."""
        plan = self.plan
        b = self.block_size
        M = plan.num_stages
        n = M * b + self.global_size
        L = np.zeros((n, n))
        interior, sep = permuted_positions(plan)

        def put(r, c, blk):
            L[r * b : r * b + blk.shape[0], c * b : c * b + blk.shape[1]] = blk

        for k in range(plan.p):
            pos = interior[k]
            for i, d in enumerate(self.D[k]):
                put(pos[i], pos[i], d)
            for i, e in enumerate(self.E[k]):
                put(pos[i + 1], pos[i], e)
            if self.G is not None:
                for i, g in enumerate(self.G[k]):
                    put(M, pos[i], g)
            if k >= 1:
                for i, bt in enumerate(self.Bt[k]):
                    put(sep[k], pos[i], bt)
                put(sep[k], sep[k], self.A[k])
                if self.Q is not None:
                    put(M, sep[k], self.Q[k])
            if k < plan.p - 1:
                put(sep[k + 1], pos[-1], self.F[k])
            if 1 <= k < plan.p - 1:
                put(sep[k + 1], sep[k], self.H[k])
        if self.R is not None:
            L[M * b :, M * b :] = self.R
        return L


def _run(executor: Executor | None, fn: Callable[[int], object], p: int) -> list:
    """Run ``fn(0..p-1)`` as concurrent tasks and join; results in task order."""
    if p == 1:
        return [fn(0)]
    ctx = ThreadPoolExecutor(max_workers=p) if executor is None else nullcontext(executor)
    with ctx as ex:
        futures = [ex.submit(fn, k) for k in range(p)]
        return [f.result() for f in futures]


def _chol(A, counter, where: str):
    try:
        return K.chol_lower(A, counter)
    except NotPositiveDefiniteError as exc:
        raise exc.located(where) from None


# --------------------------------------------------------------------------
# factorization


def _factor_segment(seg: SegmentedKKT, k: int, c: FlopCounter) -> dict:
    p = seg.plan.p
    N = seg.plan.seg_lengths[k]
    has_g = seg.G is not None
    b = seg.block_size

    Dh: list = [None] * N
    Eh: list = [None] * (N - 1)
    Gh: list | None = [None] * N if has_g else None
    Bt: list = [None] * N if k >= 1 else []
    Rk = np.zeros((seg.global_size, seg.global_size)) if has_g else None
    Ah = seg.A[k] if k >= 1 else None
    Qh = seg.Q[k] if k >= 1 and has_g else None

    Dcur = seg.D[k][0]
    Gcur = seg.G[k][0] if has_g else None
    Bcur = seg.B[k] if k >= 1 else None
    for i in range(N):
        Dh[i] = _chol(Dcur, c, f"segment {k}, stage {i}")
        if i < N - 1:
            Eh[i] = K.solve_right_transposed(seg.E[k][i], Dh[i], c)
        if has_g:
            Gh[i] = K.solve_right_transposed(Gcur, Dh[i], c)
            Rk = K.sym_downdate(Rk, Gh[i], c)
        if i < N - 1:
            Dcur = K.sym_downdate(seg.D[k][i + 1], Eh[i], c)
            if has_g:
                Gcur = K.mul_sub(seg.G[k][i + 1], Gh[i], Eh[i].T, c)
        if k >= 1:
            Bt[i] = K.solve_right_transposed(Bcur, Dh[i], c)
            Ah = K.sym_downdate(Ah, Bt[i], c)
            if i < N - 1:
                # the coupling to later interior stages starts out as zero
                Bcur = K.mul_sub(np.zeros((b, b)), Bt[i], Eh[i].T, c)
            if has_g:
                Qh = K.mul_sub(Qh, Gh[i], Bt[i].T, c)

    Fh = K.solve_right_transposed(seg.F[k], Dh[N - 1], c) if k < p - 1 else None
    Hh = K.mul_sub(np.zeros((b, b)), Fh, Bt[N - 1].T, c) if 0 < k < p - 1 else None
    return dict(D=Dh, E=Eh, G=Gh, Bt=Bt, F=Fh, H=Hh, A=Ah, Q=Qh, Rk=Rk)


def factorize_parallel(
    seg: SegmentedKKT,
    workers: int | None = None,
    *,
    executor: Executor | None = None,
    flops: PhaseFlops | None = None,
) -> ArrowFactor:
    """Factor the permuted matrix: parallel segment phase, then the separators.

    ``workers`` must equal ``seg.plan.p`` when given.  ``flops`` receives
    per-segment and sequential-phase tallies.
    """
    plan = seg.plan
    p = plan.p
    if workers is not None and workers != p:
        raise PlanError(f"worker count {workers} does not match plan with p={p}")
    if flops is None:
        flops = PhaseFlops.for_plan(plan)
    elif len(flops.segments) != p:
        raise PlanError("flop tally has the wrong number of segments")
    has_g = seg.G is not None

    parts = _run(executor, lambda k: _factor_segment(seg, k, flops.segments[k]), p)

    c = flops.sequential
    A = [part["A"] for part in parts]
    H = [part["H"] for part in parts]
    Q = [part["Q"] for part in parts] if has_g else None
    F = [part["F"] for part in parts]
    G = [part["G"] for part in parts] if has_g else None
    R = seg.R if has_g else None
    for k in range(1, p):
        A[k] = K.sym_downdate(A[k], F[k - 1], c)
        A[k] = _chol(A[k], c, f"separator {k}")
        if k < p - 1:
            H[k] = K.solve_right_transposed(H[k], A[k], c)
        if has_g:
            Q[k] = K.mul_sub(Q[k], G[k - 1][-1], F[k - 1].T, c)
            Q[k] = K.solve_right_transposed(Q[k], A[k], c)
        if k < p - 1:
            A[k + 1] = K.sym_downdate(A[k + 1], H[k], c)
            if has_g:
                Q[k + 1] = K.mul_sub(Q[k + 1], Q[k], H[k].T, c)
        if has_g:
            R = K.sym_downdate(R, Q[k], c)
    if has_g:
        for part in parts:
            R = R + part["Rk"]
        R = _chol(R, c, "global block")

    return ArrowFactor(
        plan=plan,
        D=[part["D"] for part in parts],
        E=[part["E"] for part in parts],
        G=G,
        Bt=[part["Bt"] for part in parts],
        F=F,
        A=A,
        H=H,
        Q=Q,
        R=R,
    )


# --------------------------------------------------------------------------
# substitution


def _split(f: ArrowFactor, v: BlockVector):
    """Split a permuted vector into per-segment interiors and separators."""
    plan = f.plan
    if len(v.stages) != plan.num_stages or v.global_size != f.global_size:
        raise DimensionError("vector does not conform to the factor")
    interior, sep = permuted_positions(plan)
    ints = [[v.stages[j] for j in interior[k]] for k in range(plan.p)]
    seps = [None if s is None else v.stages[s] for s in sep]
    return ints, seps


def _join(ints, seps, glob) -> BlockVector:
    stages = [x for part in ints for x in part]
    stages += [s for s in seps[1:]]
    return BlockVector(stages, glob)


def forward_parallel(
    f: ArrowFactor,
    rh: BlockVector,
    *,
    executor: Executor | None = None,
    flops: PhaseFlops | None = None,
) -> BlockVector:
    """Solve ``L y = rh`` for the permuted right-hand side ``rh``."""
    plan = f.plan
    p = plan.p
    has_g = f.R is not None
    if flops is None:
        flops = PhaseFlops.for_plan(plan)
    r_int, r_sep = _split(f, rh)

    def task(k: int):
        c = flops.segments[k]
        N = plan.seg_lengths[k]
        y: list = [None] * N
        ysep = r_sep[k] if k >= 1 else None
        yg = np.zeros(f.global_size) if has_g else None
        cur = r_int[k][0]
        for i in range(N):
            y[i] = K.tri_solve_forward(f.D[k][i], cur, c)
            if i < N - 1:
                cur = K.mat_vec_sub(r_int[k][i + 1], f.E[k][i], y[i], c)
            if k >= 1:
                ysep = K.mat_vec_sub(ysep, f.Bt[k][i], y[i], c)
            if has_g:
                yg = K.mat_vec_sub(yg, f.G[k][i], y[i], c)
        return y, ysep, yg

    parts = _run(executor, task, p)
    y_int = [part[0] for part in parts]
    y_sep = [part[1] for part in parts]

    c = flops.sequential
    yg = rh.glob.copy() if has_g else None
    for k in range(1, p):
        y_sep[k] = K.mat_vec_sub(y_sep[k], f.F[k - 1], y_int[k - 1][-1], c)
        y_sep[k] = K.tri_solve_forward(f.A[k], y_sep[k], c)
        if k < p - 1:
            y_sep[k + 1] = K.mat_vec_sub(y_sep[k + 1], f.H[k], y_sep[k], c)
        if has_g:
            yg = K.mat_vec_sub(yg, f.Q[k], y_sep[k], c)
    if has_g:
        for part in parts:
            yg = yg + part[2]
        yg = K.tri_solve_forward(f.R, yg, c)
    return _join(y_int, y_sep, yg)


def backward_parallel(
    f: ArrowFactor,
    yh: BlockVector,
    *,
    executor: Executor | None = None,
    flops: PhaseFlops | None = None,
) -> BlockVector:
    """Solve ``L^T x = yh``: separators and global block first, then segments."""
    plan = f.plan
    p = plan.p
    has_g = f.R is not None
    if flops is None:
        flops = PhaseFlops.for_plan(plan)
    y_int, y_sep = _split(f, yh)

    c = flops.sequential
    xg = K.tri_solve_backward(f.R, yh.glob, c) if has_g else None
    x_sep: list = [None] * p
    for k in range(p - 1, 0, -1):
        acc = y_sep[k]
        if has_g:
            acc = K.mat_vec_sub(acc, f.Q[k].T, xg, c)
        if k < p - 1:
            acc = K.mat_vec_sub(acc, f.H[k].T, x_sep[k + 1], c)
        x_sep[k] = K.tri_solve_backward(f.A[k], acc, c)

    def task(k: int):
        c = flops.segments[k]
        N = plan.seg_lengths[k]
        x: list = [None] * N
        cur = y_int[k][N - 1]
        if k < p - 1:
            cur = K.mat_vec_sub(cur, f.F[k].T, x_sep[k + 1], c)
        for i in range(N - 1, -1, -1):
            if has_g:
                cur = K.mat_vec_sub(cur, f.G[k][i].T, xg, c)
            if k >= 1:
                cur = K.mat_vec_sub(cur, f.Bt[k][i].T, x_sep[k], c)
            x[i] = K.tri_solve_backward(f.D[k][i], cur, c)
            if i > 0:
                cur = K.mat_vec_sub(y_int[k][i - 1], f.E[k][i - 1].T, x[i], c)
        return x

    x_int = _run(executor, task, p)
    return _join(x_int, x_sep, xg)


def solve(
    m: BlockTridiagArrowMatrix,
    r: BlockVector,
    plan: PartitionPlan,
    *,
    executor: Executor | None = None,
) -> BlockVector:
    """Solve ``Psi x = r`` with the permuted parallel scheme.

    ``p = 1`` delegates to the sequential factorization.  For ``p > 1`` the
    plan must leave at least two stages per thread (``M >= 2p``).
    """
    from .seq import factorize_sequential, solve_sequential

    check(m)
    if not conforms(m, r):
        raise DimensionError("right-hand side does not conform to the matrix")
    plan.check(m.num_stages)
    if plan.p == 1:
        return solve_sequential(factorize_sequential(m), r)
    if m.num_stages < 2 * plan.p:
        raise PlanError(f"{m.num_stages} stages cannot be split over p={plan.p} threads (need M >= 2p)")

    ctx = ThreadPoolExecutor(max_workers=plan.p) if executor is None else nullcontext(executor)
    with ctx as ex:
        seg = make_layout(m, plan)
        f = factorize_parallel(seg, plan.p, executor=ex)
        y = forward_parallel(f, permute_rhs(r, plan), executor=ex)
        xh = backward_parallel(f, y, executor=ex)
    return unpermute_solution(xh, plan)


@dataclass
class SolveTimings:
    """Wall-clock split (seconds): factorization, forward+backward, other."""

    factor: float = 0.0
    solve: float = 0.0
    other: float = 0.0

    @property
    def total(self) -> float:
        return self.factor + self.solve + self.other

    def __add__(self, other: "SolveTimings") -> "SolveTimings":
        return SolveTimings(self.factor + other.factor, self.solve + other.solve, self.other + other.other)


def solve_timed(
    m: BlockTridiagArrowMatrix,
    r: BlockVector,
    plan: PartitionPlan,
    *,
    executor: Executor | None = None,
    factor_flops: PhaseFlops | FlopCounter | None = None,
    solve_flops: PhaseFlops | FlopCounter | None = None,
) -> tuple[BlockVector, SolveTimings]:
    """Like :func:`solve` but reports timings and optionally flop tallies.

    "other" covers layout and (un)permutation.  With ``p = 1`` the flop
    arguments must be plain :class:`FlopCounter` objects (or ``None``).
    """
    from time import perf_counter

    from .seq import factorize_sequential, solve_sequential

    t = SolveTimings()
    plan.check(m.num_stages)
    if plan.p == 1:
        t0 = perf_counter()
        f = factorize_sequential(m, factor_flops)
        t1 = perf_counter()
        x = solve_sequential(f, r, solve_flops)
        t.factor, t.solve = t1 - t0, perf_counter() - t1
        return x, t
    if m.num_stages < 2 * plan.p:
        raise PlanError(f"{m.num_stages} stages cannot be split over p={plan.p} threads (need M >= 2p)")

    ctx = ThreadPoolExecutor(max_workers=plan.p) if executor is None else nullcontext(executor)
    with ctx as ex:
        t0 = perf_counter()
        seg = make_layout(m, plan)
        rh = permute_rhs(r, plan)
        t1 = perf_counter()
        f = factorize_parallel(seg, plan.p, executor=ex, flops=factor_flops)
        t2 = perf_counter()
        y = forward_parallel(f, rh, executor=ex, flops=solve_flops)
        xh = backward_parallel(f, y, executor=ex, flops=solve_flops)
        t3 = perf_counter()
        x = unpermute_solution(xh, plan)
        t4 = perf_counter()
    t.factor, t.solve, t.other = t2 - t1, t3 - t2, (t1 - t0) + (t4 - t3)
    return x, t
