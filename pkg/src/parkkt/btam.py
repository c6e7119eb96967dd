"""Block-tridiagonal-arrow matrices, partition plans and the permuted layout.

Stages are 0-based throughout.  A plan with ``p`` segments of interior lengths
``N_1..N_p`` places one separator stage between consecutive segments, so the
stage sequence is::

    seg 0 | sep 1 | seg 1 | sep 2 | ... | sep p-1 | seg p-1

The permuted ordering lists every segment interior (segment by segment),
then the separators in order, then the global block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, PlanError


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    if out.ndim == 0:
        out = out.reshape(1, 1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BlockTridiagArrowMatrix:
    """Symmetric block-tridiagonal matrix with an optional dense arrow.

    ``diag[i]`` is the diagonal block of stage ``i``, ``sub[i]`` couples stage
    ``i`` to ``i+1`` (shape ``n_{i+1} x n_i``), ``arrow[i]`` couples the global
    block to stage ``i`` (shape ``n_g x n_i``) and ``corner`` is the global
    diagonal block.

    Construction does not check conformance; use :func:`validate`.
    """

    diag: tuple
    sub: tuple
    arrow: tuple | None = None
    corner: np.ndarray | None = None

    def __init__(self, diag, sub, arrow=None, corner=None):
        object.__setattr__(self, "diag", tuple(_frozen(d) for d in diag))
        object.__setattr__(self, "sub", tuple(_frozen(s) for s in sub))
        if arrow is not None and len(arrow) > 0 and corner is not None and np.size(corner) > 0:
            object.__setattr__(self, "arrow", tuple(_frozen(a) for a in arrow))
            object.__setattr__(self, "corner", _frozen(corner))
        else:
            object.__setattr__(self, "arrow", None)
            object.__setattr__(self, "corner", None)

    @property
    def num_stages(self) -> int:
        return len(self.diag)

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(d.shape[0] for d in self.diag)

    @property
    def global_size(self) -> int:
        return 0 if self.corner is None else self.corner.shape[0]

    @property
    def size(self) -> int:
        return sum(self.stage_sizes) + self.global_size

    @property
    def is_uniform(self) -> bool:
        return len(set(self.stage_sizes)) <= 1

    @property
    def block_size(self) -> int:
        if not self.is_uniform:
            raise DimensionError("stage sizes are not uniform")
        return self.stage_sizes[0] if self.diag else 0

    def offsets(self) -> np.ndarray:
        """Start offset of each stage in the natural dense ordering."""
        return np.concatenate([[0], np.cumsum(self.stage_sizes)]).astype(int)


@dataclass(frozen=True, eq=False)
class BlockVector:
    """Stage-partitioned vector with an optional global part."""

    stages: tuple
    glob: np.ndarray | None = None

    def __init__(self, stages, glob=None):
        object.__setattr__(self, "stages", tuple(np.array(s, dtype=np.float64).reshape(-1) for s in stages))
        if glob is not None and np.size(glob) > 0:
            object.__setattr__(self, "glob", np.array(glob, dtype=np.float64).reshape(-1))
        else:
            object.__setattr__(self, "glob", None)

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.stages)

    @property
    def global_size(self) -> int:
        return 0 if self.glob is None else self.glob.shape[0]

    def to_array(self) -> np.ndarray:
        parts = list(self.stages)
        if self.glob is not None:
            parts.append(self.glob)
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_array(cls, x, stage_sizes: Sequence[int], global_size: int = 0) -> "BlockVector":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != sum(stage_sizes) + global_size:
            raise DimensionError(
                f"vector of length {x.shape[0]} does not match stage sizes "
                f"(total {sum(stage_sizes)}) plus global size {global_size}"
            )
        cuts = np.cumsum([0, *stage_sizes])
        stages = [x[cuts[i] : cuts[i + 1]] for i in range(len(stage_sizes))]
        glob = x[cuts[-1] :] if global_size else None
        return cls(stages, glob)

    @classmethod
    def zeros_like(cls, m: BlockTridiagArrowMatrix) -> "BlockVector":
        return cls([np.zeros(n) for n in m.stage_sizes], np.zeros(m.global_size) if m.global_size else None)


def conforms(m: BlockTridiagArrowMatrix, r: BlockVector) -> bool:
    return r.stage_sizes == m.stage_sizes and r.global_size == m.global_size


@dataclass(frozen=True)
class PartitionPlan:
    """``p`` segments of interior lengths ``seg_lengths``, ``p - 1`` separators."""

    p: int
    seg_lengths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "seg_lengths", tuple(int(n) for n in self.seg_lengths))
        if self.p < 1:
            raise PlanError(f"thread count must be >= 1, got {self.p}")
        if len(self.seg_lengths) != self.p:
            raise PlanError(f"plan for p={self.p} needs {self.p} segment lengths, got {len(self.seg_lengths)}")
        if any(n < 1 for n in self.seg_lengths):
            raise PlanError(f"segment lengths must be >= 1, got {self.seg_lengths}")

    @classmethod
    def single(cls, num_stages: int) -> "PartitionPlan":
        return cls(1, (num_stages,))

    @property
    def num_stages(self) -> int:
        return sum(self.seg_lengths) + self.p - 1

    def check(self, num_stages: int) -> None:
        if self.num_stages != num_stages:
            raise PlanError(
                f"plan covers {self.num_stages} stages (sum N_k + p - 1) but the matrix has {num_stages}"
            )

    def segment_start(self, k: int) -> int:
        """Global index of the first interior stage of segment ``k``."""
        return sum(self.seg_lengths[:k]) + k

    def segment_stages(self, k: int) -> range:
        s = self.segment_start(k)
        return range(s, s + self.seg_lengths[k])

    def separator(self, k: int) -> int:
        """Global index of the separator preceding segment ``k`` (``k >= 1``)."""
        if not 1 <= k < self.p:
            raise IndexError(f"separator index {k} out of range for p={self.p}")
        return self.segment_start(k) - 1


def validate(m: BlockTridiagArrowMatrix) -> list[str]:
    """Return a list of human-readable problems; empty means valid."""
    errs: list[str] = []
    M = m.num_stages
    if M < 1:
        return ["matrix has no stages"]
    sizes = []
    for i, d in enumerate(m.diag):
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            errs.append(f"diag[{i}] must be square, got shape {d.shape}")
            sizes.append(d.shape[0] if d.ndim == 2 else -1)
            continue
        sizes.append(d.shape[0])
        if not np.all(np.isfinite(d)):
            errs.append(f"diag[{i}] has non-finite entries")
            continue
        scale = np.max(np.abs(d)) if d.size else 0.0
        if np.max(np.abs(d - d.T), initial=0.0) > 1e-12 * scale:
            errs.append(f"diag[{i}] is not symmetric")
    if len(m.sub) != M - 1:
        errs.append(f"expected {M - 1} sub-diagonal blocks, got {len(m.sub)}")
    for i, s in enumerate(m.sub[: M - 1]):
        want = (sizes[i + 1], sizes[i])
        if s.shape != want:
            errs.append(f"sub[{i}] has shape {s.shape}, expected {want}")
        elif not np.all(np.isfinite(s)):
            errs.append(f"sub[{i}] has non-finite entries")
    if m.corner is not None:
        ng = m.corner.shape[0]
        c = m.corner
        if c.ndim != 2 or c.shape != (ng, ng):
            errs.append(f"corner must be square, got shape {c.shape}")
        elif not np.all(np.isfinite(c)):
            errs.append("corner has non-finite entries")
        elif np.max(np.abs(c - c.T), initial=0.0) > 1e-12 * np.max(np.abs(c)):
            errs.append("corner is not symmetric")
        if len(m.arrow) != M:
            errs.append(f"expected {M} arrow blocks, got {len(m.arrow)}")
        for i, a in enumerate(m.arrow[:M]):
            if a.shape != (ng, sizes[i]):
                errs.append(f"arrow[{i}] has shape {a.shape}, expected {(ng, sizes[i])}")
            elif not np.all(np.isfinite(a)):
                errs.append(f"arrow[{i}] has non-finite entries")
    return errs


def check(m: BlockTridiagArrowMatrix) -> None:
    errs = validate(m)
    if errs:
        raise DimensionError("; ".join(errs))


def to_dense(m: BlockTridiagArrowMatrix) -> np.ndarray:
    """Assemble the full symmetric dense matrix (natural ordering)."""
    off = m.offsets()
    n = m.size
    out = np.zeros((n, n))
    for i, d in enumerate(m.diag):
        out[off[i] : off[i + 1], off[i] : off[i + 1]] = d
    for i, s in enumerate(m.sub):
        out[off[i + 1] : off[i + 2], off[i] : off[i + 1]] = s
        out[off[i] : off[i + 1], off[i + 1] : off[i + 2]] = s.T
    if m.corner is not None:
        g = off[-1]
        out[g:, g:] = m.corner
        for i, a in enumerate(m.arrow):
            out[g:, off[i] : off[i + 1]] = a
            out[off[i] : off[i + 1], g:] = a.T
    return out


def matvec(m: BlockTridiagArrowMatrix, x: BlockVector) -> BlockVector:
    """Blockwise ``Psi @ x`` without forming the dense matrix."""
    M = m.num_stages
    out = [m.diag[i] @ x.stages[i] for i in range(M)]
    for i, s in enumerate(m.sub):
        out[i + 1] = out[i + 1] + s @ x.stages[i]
        out[i] = out[i] + s.T @ x.stages[i + 1]
    glob = None
    if m.corner is not None:
        glob = m.corner @ x.glob
        for i, a in enumerate(m.arrow):
            glob = glob + a @ x.stages[i]
            out[i] = out[i] + a.T @ x.glob
    return BlockVector(out, glob)


def inf_norm(m: BlockTridiagArrowMatrix) -> float:
    """Infinity norm (max absolute row sum) computed blockwise."""
    rows = [np.abs(d).sum(axis=1) for d in m.diag]
    for i, s in enumerate(m.sub):
        rows[i + 1] = rows[i + 1] + np.abs(s).sum(axis=1)
        rows[i] = rows[i] + np.abs(s).sum(axis=0)
    if m.corner is not None:
        g = np.abs(m.corner).sum(axis=1)
        for i, a in enumerate(m.arrow):
            g = g + np.abs(a).sum(axis=1)
            rows[i] = rows[i] + np.abs(a).sum(axis=0)
        rows.append(g)
    return float(max(r.max(initial=0.0) for r in rows))


def relative_residual(m: BlockTridiagArrowMatrix, x: BlockVector, r: BlockVector) -> float:
    """``||Psi x - r||_inf / (||Psi||_inf ||x||_inf + ||r||_inf)``."""
    res = matvec(m, x).to_array() - r.to_array()
    xa = x.to_array()
    ra = r.to_array()
    denom = inf_norm(m) * np.max(np.abs(xa), initial=0.0) + np.max(np.abs(ra), initial=0.0)
    num = np.max(np.abs(res), initial=0.0)
    return 0.0 if num == 0.0 else float(num / denom)


# --------------------------------------------------------------------------
# permutation


def permutation_of(plan: PartitionPlan, num_stages: int) -> np.ndarray:
    """Stage order of the permuted matrix: ``order[new] = old``.

    All segment interiors come first (segment by segment), then the
    separators; the global block (if any) stays last.
    """
    plan.check(num_stages)
    interior = [i for k in range(plan.p) for i in plan.segment_stages(k)]
    seps = [plan.separator(k) for k in range(1, plan.p)]
    return np.array(interior + seps, dtype=int)


def inverse_permutation(order: np.ndarray) -> np.ndarray:
    inv = np.empty_like(order)
    inv[order] = np.arange(order.shape[0])
    return inv


def permute_rhs(r: BlockVector, plan: PartitionPlan) -> BlockVector:
    order = permutation_of(plan, len(r.stages))
    return BlockVector([r.stages[j] for j in order], r.glob)


def unpermute_solution(xh: BlockVector, plan: PartitionPlan) -> BlockVector:
    order = permutation_of(plan, len(xh.stages))
    out = [None] * len(order)
    for new, old in enumerate(order):
        out[old] = xh.stages[new]
    return BlockVector(out, xh.glob)


def permutation_matrix(m: BlockTridiagArrowMatrix, plan: PartitionPlan) -> np.ndarray:
    """Dense permutation matrix ``P`` with ``P @ x`` the permuted vector."""
    order = permutation_of(plan, m.num_stages)
    off = m.offsets()
    idx = [np.arange(off[j], off[j + 1]) for j in order]
    idx.append(np.arange(off[-1], m.size))
    rows = np.concatenate(idx)
    P = np.zeros((m.size, m.size))
    P[np.arange(m.size), rows] = 1.0
    return P


# --------------------------------------------------------------------------
# segmented view


@dataclass(frozen=True, eq=False)
class SegmentedKKT:
    """Blocks of the matrix relabeled per segment and separator.

    Segment ``k`` (0-based) owns ``D[k][i]`` (interior diagonals),
    ``E[k][i]`` (coupling interior ``i`` to ``i+1``) and ``G[k][i]`` (arrow).
    Separator ``k`` (for ``k >= 1``) precedes segment ``k`` and owns ``A[k]``
    (its diagonal), ``B[k]`` (block in the separator's row coupling it to the
    first interior stage of segment ``k``) and ``Q[k]`` (arrow).  ``F[k]``
    (``k < p-1``) couples the last interior stage of segment ``k`` to
    separator ``k+1``, stored in the separator's row.  Entries that do not
    exist are ``None``.
    """

    plan: PartitionPlan
    D: tuple
    E: tuple
    G: tuple | None
    A: tuple
    B: tuple
    F: tuple
    Q: tuple | None
    R: np.ndarray | None

    @property
    def global_size(self) -> int:
        return 0 if self.R is None else self.R.shape[0]

    @property
    def block_size(self) -> int:
        return self.D[0][0].shape[0]


def make_layout(m: BlockTridiagArrowMatrix, plan: PartitionPlan) -> SegmentedKKT:
    """Relabel ``m`` into segments/separators under ``plan`` (no arithmetic)."""
    plan.check(m.num_stages)
    if plan.p > 1 and not m.is_uniform:
        raise DimensionError("partitioned layouts require uniform stage sizes")
    has_g = m.corner is not None
    D, E, G, A, B, F, Q = [], [], [], [], [], [], []
    for k in range(plan.p):
        st = plan.segment_stages(k)
        D.append(tuple(m.diag[j] for j in st))
        E.append(tuple(m.sub[j] for j in st[:-1]))
        G.append(tuple(m.arrow[j] for j in st) if has_g else None)
        if k >= 1:
            s = plan.separator(k)
            A.append(m.diag[s])
            B.append(m.sub[s].T)
            Q.append(m.arrow[s] if has_g else None)
        else:
            A.append(None)
            B.append(None)
            Q.append(None)
        F.append(m.sub[st[-1]] if k < plan.p - 1 else None)
    return SegmentedKKT(
        plan=plan,
        D=tuple(D),
        E=tuple(E),
        G=tuple(G) if has_g else None,
        A=tuple(A),
        B=tuple(B),
        F=tuple(F),
        Q=tuple(Q) if has_g else None,
        R=m.corner,
    )


def permuted_positions(plan: PartitionPlan) -> tuple[list[list[int]], list[int | None]]:
    """Block positions in the permuted ordering.

    Returns ``(interior, sep)`` where ``interior[k][i]`` is the permuted block
    index of interior stage ``i`` of segment ``k`` and ``sep[k]`` the index of
    separator ``k`` (``None`` for ``k = 0``).  The global block sits at
    ``plan.num_stages``.
    """
    interior, pos = [], 0
    for n in plan.seg_lengths:
        interior.append(list(range(pos, pos + n)))
        pos += n
    sep: list[int | None] = [None]
    for _ in range(1, plan.p):
        sep.append(pos)
        pos += 1
    return interior, sep


def segmented_to_dense(seg: SegmentedKKT) -> np.ndarray:
    """Dense permuted matrix ``P Psi P^T`` rebuilt from the segmented blocks."""
    plan = seg.plan
    b = seg.block_size
    ng = seg.global_size
    M = plan.num_stages
    out = np.zeros((M * b + ng, M * b + ng))
    interior, sep = permuted_positions(plan)

    def put(r, c, blk):
        out[r * b : r * b + blk.shape[0], c * b : c * b + blk.shape[1]] = blk
        if r != c:
            out[c * b : c * b + blk.shape[1], r * b : r * b + blk.shape[0]] = blk.T

    for k in range(plan.p):
        pos = interior[k]
        for i, d in enumerate(seg.D[k]):
            put(pos[i], pos[i], d)
        for i, e in enumerate(seg.E[k]):
            put(pos[i + 1], pos[i], e)
        if seg.G is not None:
            for i, g in enumerate(seg.G[k]):
                put(M, pos[i], g)
        if k >= 1:
            put(sep[k], sep[k], seg.A[k])
            put(sep[k], pos[0], seg.B[k])
            if seg.Q is not None:
                put(M, sep[k], seg.Q[k])
        if k < plan.p - 1:
            put(sep[k + 1], pos[-1], seg.F[k])
    if seg.R is not None:
        out[M * b :, M * b :] = seg.R
    return out
