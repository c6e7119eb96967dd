"""Flop model, optimal segment lengths and theoretical speedups.

All flop counts are exact :class:`~fractions.Fraction` values in units of
``b^3`` (factorization) or ``b^2`` (triangular solve), for uniform stage
size ``b`` and no global variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .btam import PartitionPlan
from .errors import PlanError

SIGMA = Fraction(19, 7)
"""Ratio of first-segment to other-segment length that balances factor work."""

# Reported values of the max-speedup / min-horizon table, keyed by p.
# None marks an unattainable target.
REFERENCE_TABLE = {
    2: dict(gamma_max=1.37, n2=None, n3=None, n4=None, n90=5),
    4: dict(gamma_max=2.11, n2=83, n3=None, n4=None, n90=43),
    6: dict(gamma_max=2.84, n2=35, n3=None, n4=None, n90=120),
    8: dict(gamma_max=3.58, n2=35, n3=133, n4=None, n90=239),
    10: dict(gamma_max=4.32, n2=41, n3=101, n4=536, n90=384),
    12: dict(gamma_max=5.05, n2=46, n3=93, n4=244, n90=573),
    14: dict(gamma_max=5.79, n2=52, n3=102, n4=201, n90=813),
    16: dict(gamma_max=6.53, n2=58, n3=102, n4=190, n90=1060),
}

_F = Fraction


def _check_horizon(N: int, p: int) -> None:
    if p < 1:
        raise PlanError(f"thread count must be >= 1, got {p}")
    if p == 1:
        if N < 1:
            raise PlanError("horizon must be >= 1")
    elif N < 2 * p:
        raise PlanError(f"horizon N={N} is infeasible for p={p} threads (need N >= 2p)")


def balanced_length(N: int, p: int, variant: str = "corrected") -> Fraction:
    """Real-valued balanced length of the non-first segments.

    ``"corrected"`` divides by ``p - 1 + sigma``, which makes
    ``7/3 N_1 == 19/3 N_k`` hold exactly under ``N_1 + (p-1) N_k + p - 1 = N``.
    ``"printed"`` divides by ``p + sigma``; it is kept for comparison only.
    """
    if variant == "corrected":
        den = p - 1 + SIGMA
    elif variant == "printed":
        den = p + SIGMA
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _F(N - p + 1) / den


def _balance_cost(n1: int, nk: int) -> Fraction:
    return max(_F(7, 3) * n1, _F(19, 3) * nk)


def optimal_partition(N: int, p: int, variant: str = "corrected") -> PartitionPlan:
    """Pick ``N_k`` from floor/ceil of the balanced length minimising the
    larger of the first-segment and other-segment factor costs (ties go to the
    larger ``N_k``)."""
    _check_horizon(N, p)
    if p == 1:
        return PartitionPlan.single(N)
    target = balanced_length(N, p, variant)
    best = None
    for nk in sorted({math.floor(target), math.ceil(target)}):
        n1 = N - (p - 1) * nk - (p - 1)
        if n1 < 1 or nk < 1:
            continue
        cost = _balance_cost(n1, nk)
        if best is None or cost < best[0] or (cost == best[0] and nk > best[2]):
            best = (cost, n1, nk)
    if best is None:
        raise PlanError(f"no feasible partition for N={N}, p={p}")
    _, n1, nk = best
    return PartitionPlan(p, (n1,) + (nk,) * (p - 1))


def partition_variants(N: int, p: int) -> dict[str, PartitionPlan]:
    """Plans under both balanced-length denominators, for side-by-side reports."""
    return {v: optimal_partition(N, p, v) for v in ("corrected", "printed")}


def brute_force_partition(N: int, p: int) -> tuple[Fraction, list[int]]:
    """Minimal balance cost over every feasible uniform ``N_k`` and the
    ``N_k`` values attaining it."""
    _check_horizon(N, p)
    costs = {}
    for nk in range(1, (N - p + 1) // (p - 1) + 1):
        n1 = N - (p - 1) * nk - (p - 1)
        if n1 >= 1:
            costs[nk] = _balance_cost(n1, nk)
    best = min(costs.values())
    return best, [nk for nk, c in costs.items() if c == best]


# --------------------------------------------------------------------------
# flop model


def factor_flops_sequential(N: int) -> Fraction:
    return _F(7, 3) * N - 2


def solve_flops_sequential(N: int) -> Fraction:
    # model constant; an instrumented sequential solve does 2 b^2 less
    return _F(5 * N - 2)


def _first_other(plan: PartitionPlan) -> tuple[int, int]:
    return plan.seg_lengths[0], max(plan.seg_lengths[1:])


def factor_flops_parallel(plan: PartitionPlan) -> Fraction:
    """Critical-path factorization flops (units of b^3)."""
    if plan.p == 1:
        return factor_flops_sequential(plan.num_stages)
    n1, nk = _first_other(plan)
    return _balance_cost(n1, nk) + _F(10, 3) * plan.p - _F(19, 3)


def solve_flops_parallel(plan: PartitionPlan) -> Fraction:
    """Critical-path triangular-solve flops (units of b^2)."""
    if plan.p == 1:
        return solve_flops_sequential(plan.num_stages)
    n1, nk = _first_other(plan)
    return _F(max(5 * n1 - 2, 9 * nk - 2) + 7 * plan.p - 11)


@dataclass(frozen=True)
class PhaseModel:
    """Per-task flop predictions: one entry per segment plus the sequential phase."""

    segments: tuple[Fraction, ...]
    sequential: Fraction

    @property
    def critical_path(self) -> Fraction:
        return max(self.segments) + self.sequential


def factor_phase_model(plan: PartitionPlan) -> PhaseModel:
    """Factorization flops per phase (b^3 units, no global variables)."""
    p = plan.p
    if p == 1:
        return PhaseModel((factor_flops_sequential(plan.num_stages),), _F(0))
    segs = []
    for k, n in enumerate(plan.seg_lengths):
        if k == 0:
            segs.append(_F(7, 3) * n - 1)
        elif k < p - 1:
            segs.append(_F(19, 3) * n - 1)
        else:
            segs.append(_F(19, 3) * n - 4)
    return PhaseModel(tuple(segs), _F(10, 3) * p - _F(16, 3))


def solve_phase_model(plan: PartitionPlan) -> PhaseModel:
    """Forward plus backward substitution flops per phase (b^2 units)."""
    p = plan.p
    if p == 1:
        # a single segment without separators: no coupling gemv at the end
        return PhaseModel((_F(5 * plan.num_stages - 4),), _F(0))
    segs = []
    for k, n in enumerate(plan.seg_lengths):
        if k == 0:
            segs.append(_F(5 * n - 2))
        elif k < p - 1:
            segs.append(_F(9 * n - 2))
        else:
            segs.append(_F(9 * n - 4))
    return PhaseModel(tuple(segs), _F(7 * p - 11))


# --------------------------------------------------------------------------
# speedups


def speedup(N: int, p: int, variant: str = "corrected") -> tuple[Fraction, Fraction]:
    """Theoretical (factorization, solve) speedup of ``p`` threads at horizon ``N``."""
    plan = optimal_partition(N, p, variant)
    return (
        factor_flops_sequential(N) / factor_flops_parallel(plan),
        solve_flops_sequential(N) / solve_flops_parallel(plan),
    )


def gamma_max(p: int) -> Fraction:
    """Limit of the factorization speedup as the horizon grows: ``(7p + 12)/19``."""
    if p < 1:
        raise PlanError(f"thread count must be >= 1, got {p}")
    return (p - 1 + SIGMA) / SIGMA


def min_horizon(
    p: int,
    target: float | Fraction | None = None,
    *,
    fraction: float | Fraction | None = None,
    n_max: int = 100_000,
) -> int | None:
    """Smallest ``N >= 2p`` whose factorization speedup reaches the target.

    Give either an absolute ``target`` or a ``fraction`` of :func:`gamma_max`.
    Returns ``None`` when the target is not below ``gamma_max`` (or not reached
    by ``n_max``).
    """
    if (target is None) == (fraction is None):
        raise ValueError("give exactly one of target or fraction")
    gmax = gamma_max(p)
    goal = _F(fraction) * gmax if fraction is not None else _F(target)
    if p == 1:
        return 1 if goal <= 1 else None
    if goal >= gmax:
        return None
    for N in range(2 * p, n_max + 1):
        if speedup(N, p)[0] >= goal:
            return N
    return None


@dataclass(frozen=True)
class TheoryPoint:
    N: int
    p: int
    feasible: bool
    N_1: int | None = None
    N_k: int | None = None
    factor_flops_seq: Fraction | None = None
    factor_flops_par: Fraction | None = None
    solve_flops_seq: Fraction | None = None
    solve_flops_par: Fraction | None = None

    @property
    def gamma_factor(self) -> Fraction | None:
        return None if not self.feasible else self.factor_flops_seq / self.factor_flops_par

    @property
    def gamma_solve(self) -> Fraction | None:
        return None if not self.feasible else self.solve_flops_seq / self.solve_flops_par


def theory_point(N: int, p: int) -> TheoryPoint:
    if p > 1 and N < 2 * p:
        return TheoryPoint(N, p, False)
    plan = optimal_partition(N, p)
    return TheoryPoint(
        N=N,
        p=p,
        feasible=True,
        N_1=plan.seg_lengths[0],
        N_k=plan.seg_lengths[1] if p > 1 else None,
        factor_flops_seq=factor_flops_sequential(N),
        factor_flops_par=factor_flops_parallel(plan),
        solve_flops_seq=solve_flops_sequential(N),
        solve_flops_par=solve_flops_parallel(plan),
    )


def theory_grid(p_range=range(2, 17), N_range=range(10, 201)) -> list[TheoryPoint]:
    return [theory_point(N, p) for p in p_range for N in N_range]


@dataclass(frozen=True)
class Table2Row:
    p: int
    gamma_max: Fraction
    n_gamma2: int | None
    n_gamma3: int | None
    n_gamma4: int | None
    n_90: int | None


def table2(p_values=(2, 4, 6, 8, 10, 12, 14, 16)) -> list[Table2Row]:
    return [
        Table2Row(
            p=p,
            gamma_max=gamma_max(p),
            n_gamma2=min_horizon(p, 2),
            n_gamma3=min_horizon(p, 3),
            n_gamma4=min_horizon(p, 4),
            n_90=min_horizon(p, fraction=_F(9, 10)),
        )
        for p in p_values
    ]


def table2_mismatches(rows: list[Table2Row] | None = None) -> list[str]:
    """Cells where the computed table differs from :data:`REFERENCE_TABLE`."""
    rows = table2() if rows is None else rows
    out = []
    for row in rows:
        ref = REFERENCE_TABLE.get(row.p)
        if ref is None:
            continue
        if round(float(row.gamma_max), 2) != ref["gamma_max"]:
            out.append(f"p={row.p}: gamma_max {float(row.gamma_max):.2f} vs reported {ref['gamma_max']}")
        for key, name in (("n2", "n_gamma2"), ("n3", "n_gamma3"), ("n4", "n_gamma4"), ("n90", "n_90")):
            got = getattr(row, name)
            if got != ref[key]:
                out.append(f"p={row.p}: {name} computed {got} vs reported {ref[key]}")
    return out
