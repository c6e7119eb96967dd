"""Parallel Cholesky factorization and triangular solves for SPD
block-tridiagonal matrices with an arrow (global) block row and column."""

from .btam import BlockTridiagArrowMatrix, BlockVector, PartitionPlan, relative_residual
from .errors import (
    DimensionError,
    FormatError,
    NotPositiveDefiniteError,
    ParKKTError,
    PlanError,
    SingularFactorError,
)
from .kernels import FlopCounter
from .par import factorize_parallel, solve, solve_timed
from .planner import optimal_partition, speedup
from .seq import factorize_sequential, sequential_solve, solve_sequential

__all__ = [
    "BlockTridiagArrowMatrix",
    "BlockVector",
    "PartitionPlan",
    "relative_residual",
    "DimensionError",
    "FormatError",
    "NotPositiveDefiniteError",
    "ParKKTError",
    "PlanError",
    "SingularFactorError",
    "FlopCounter",
    "factorize_parallel",
    "solve",
    "solve_timed",
    "optimal_partition",
    "speedup",
    "factorize_sequential",
    "sequential_solve",
    "solve_sequential",
]

__version__ = "0.1.0"
