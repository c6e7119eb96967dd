"""Random SPD block-tridiagonal-arrow systems for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from ..btam import BlockTridiagArrowMatrix, BlockVector

# Chain of 20 masses: 2*20 states + 19 inputs per stage.
CHAIN_OF_MASSES_BLOCK = 59


def random_spd_bta(
    M: int,
    b: int = CHAIN_OF_MASSES_BLOCK,
    n_g: int = 0,
    seed: int | None = 0,
    dominance: float = 1.0,
) -> BlockTridiagArrowMatrix:
    """Random SPD matrix with ``M`` stages of size ``b`` and ``n_g`` globals.

    Off-diagonal blocks are uniform in [-1, 1].  Each diagonal block is
    ``G G^T + (dominance + c) I`` where ``c`` bounds the spectral norms of all
    couplings in that block row, which makes the matrix block diagonally
    dominant and hence SPD.
    """
    if M < 1:
        raise ValueError("need at least one stage")
    rng = np.random.default_rng(seed)
    sub = [rng.uniform(-1.0, 1.0, (b, b)) for _ in range(M - 1)]
    arrow = [rng.uniform(-1.0, 1.0, (n_g, b)) for _ in range(M)] if n_g else None

    # Frobenius norms bound spectral norms from above
    sub_norm = [np.linalg.norm(s) for s in sub]
    arrow_norm = [np.linalg.norm(a) for a in arrow] if n_g else [0.0] * M
    diag = []
    for i in range(M):
        g = rng.uniform(-1.0, 1.0, (b, b))
        c = arrow_norm[i]
        if i > 0:
            c += sub_norm[i - 1]
        if i < M - 1:
            c += sub_norm[i]
        diag.append(g @ g.T + (dominance + c) * np.eye(b))
    corner = None
    if n_g:
        g = rng.uniform(-1.0, 1.0, (n_g, n_g))
        corner = g @ g.T + (dominance + sum(arrow_norm)) * np.eye(n_g)
    return BlockTridiagArrowMatrix(diag, sub, arrow, corner)


def random_rhs(m: BlockTridiagArrowMatrix, seed: int | None = 0) -> BlockVector:
    rng = np.random.default_rng(seed)
    return BlockVector(
        [rng.uniform(-1.0, 1.0, n) for n in m.stage_sizes],
        rng.uniform(-1.0, 1.0, m.global_size) if m.global_size else None,
    )
