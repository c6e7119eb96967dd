from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest

from parkkt.btam import BlockTridiagArrowMatrix, BlockVector, PartitionPlan, make_layout, permute_rhs
from parkkt.errors import DimensionError, NotPositiveDefiniteError, PlanError
from parkkt.gen.synthetic import random_rhs, random_spd_bta
from parkkt.par import PhaseFlops, backward_parallel, factorize_parallel, forward_parallel, solve, solve_timed
from parkkt.planner import optimal_partition
from parkkt.seq import sequential_solve

from oracles import dense_from_blocks, dense_permutation, naive_chol, scaled_residual


def permuted_dense(m, lengths):
    P = dense_permutation(lengths, m.stage_sizes[0], m.global_size)
    return P @ dense_from_blocks(m.diag, m.sub, m.arrow, m.corner) @ P.T


def test_identity_factor():
    b, M = 2, 7
    plan = PartitionPlan(3, (2, 1, 2))
    m = BlockTridiagArrowMatrix([np.eye(b)] * M, [np.zeros((b, b))] * (M - 1), [np.zeros((1, b))] * M, np.eye(1))
    f = factorize_parallel(make_layout(m, plan), 3)
    assert np.array_equal(f.to_dense(), np.eye(M * b + 1))
    for k in range(3):
        assert all(np.array_equal(d, np.eye(b)) for d in f.D[k])
        assert all(not e.any() for e in f.E[k])
        if k >= 1:
            assert all(not bt.any() for bt in f.Bt[k])
            assert np.array_equal(f.A[k], np.eye(b))
    r = random_rhs(m, seed=1)
    assert np.array_equal(solve(m, r, plan).to_array(), r.to_array())


def test_tridiagonal_hand_case():
    m = BlockTridiagArrowMatrix([[[2.0]]] * 5, [[[-1.0]]] * 4)
    f = factorize_parallel(make_layout(m, PartitionPlan(2, (2, 2))), 2)
    ref = naive_chol(permuted_dense(m, (2, 2)))
    assert np.abs(f.to_dense() - ref).max() <= 1e-14
    r = BlockVector([[1.0], [2.0], [3.0], [4.0], [5.0]])
    x = solve(m, r, PartitionPlan(2, (2, 2))).to_array()
    ref = np.linalg.solve(dense_from_blocks(m.diag, m.sub), r.to_array())
    assert np.abs(x - ref).max() <= 1e-14


@pytest.mark.parametrize(
    "M,b,ng,lengths",
    [(9, 3, 3, (5, 3)), (9, 2, 0, (3, 2, 2)), (11, 2, 2, (2, 2, 2, 2)), (13, 1, 5, (3, 2, 2, 1, 1))],
)
def test_factor_reconstruction(M, b, ng, lengths):
    m = random_spd_bta(M, b, ng, seed=M * b)
    plan = PartitionPlan(len(lengths), lengths)
    L = factorize_parallel(make_layout(m, plan), plan.p).to_dense()
    A = permuted_dense(m, lengths)
    assert np.abs(L @ L.T - A).max() <= 1e-11 * np.abs(A).max()
    assert np.abs(L - naive_chol(A)).max() <= 1e-11 * np.abs(L).max()


def allowed_blocks(lengths, ng):
    """Block pattern of the permuted lower factor, from the layout rule."""
    p = len(lengths)
    M = sum(lengths) + p - 1
    ok = set()
    pos, interior = 0, []
    for n in lengths:
        interior.append(list(range(pos, pos + n)))
        pos += n
    sep = [None] + list(range(pos, pos + p - 1))
    for k in range(p):
        for i, j in enumerate(interior[k]):
            ok.add((j, j))
            if i + 1 < lengths[k]:
                ok.add((interior[k][i + 1], j))
            if k >= 1:
                ok.add((sep[k], j))
        if k < p - 1:
            ok.add((sep[k + 1], interior[k][-1]))
        if k >= 1:
            ok.add((sep[k], sep[k]))
        if 1 <= k < p - 1:
            ok.add((sep[k + 1], sep[k]))
    if ng:
        for j in range(M + 1):
            ok.add((M, j))
    return ok, M


@pytest.mark.parametrize("lengths,ng", [((3, 2, 2, 2), 0), ((4, 2, 3), 2), ((2, 2), 1)])
def test_fill_in_pattern(lengths, ng):
    b = 2
    plan = PartitionPlan(len(lengths), lengths)
    m = random_spd_bta(plan.num_stages, b, ng, seed=11)
    f = factorize_parallel(make_layout(m, plan), plan.p)
    ok, M = allowed_blocks(lengths, ng)
    L = f.to_dense()
    nb = M + (1 if ng else 0)
    for bi in range(nb):
        for bj in range(nb):
            blk = L[bi * b : bi * b + (b if bi < M else ng), bj * b : bj * b + (b if bj < M else ng)]
            if (bi, bj) not in ok:
                assert not blk.any(), f"unexpected fill at block ({bi}, {bj})"
    # the separator rows fill in under every interior stage of their segment
    for k in range(1, plan.p):
        assert len(f.Bt[k]) == lengths[k]
        assert all(bt.any() for bt in f.Bt[k])
    # H exists exactly between consecutive separators
    assert [h is not None for h in f.H] == [False] + [True] * (plan.p - 2) + [False] * (plan.p > 1)


def test_forward_and_backward_against_dense_triangular():
    plan = PartitionPlan(3, (3, 2, 2))
    m = random_spd_bta(plan.num_stages, 3, 2, seed=21)
    f = factorize_parallel(make_layout(m, plan), 3)
    L = f.to_dense()
    rh = permute_rhs(random_rhs(m, seed=3), plan)
    y = forward_parallel(f, rh)
    assert np.abs(L @ y.to_array() - rh.to_array()).max() <= 1e-12
    x = backward_parallel(f, y)
    assert np.abs(L.T @ x.to_array() - y.to_array()).max() <= 1e-12
    z = forward_parallel(f, BlockVector.from_array(np.zeros(m.size), [3] * plan.num_stages, 2))
    assert not z.to_array().any()


@pytest.mark.parametrize("seed", range(25))
def test_solve_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 7))
    M = int(rng.integers(2 * p, 41))
    b = int(rng.integers(1, 9))
    ng = int(rng.choice([0, 2, 5]))
    m = random_spd_bta(M, b, ng, seed=seed)
    r = random_rhs(m, seed=seed + 7)
    plan = optimal_partition(M, p)
    x = solve(m, r, plan).to_array()
    A = dense_from_blocks(m.diag, m.sub, m.arrow, m.corner)
    ref = np.linalg.solve(A, r.to_array())
    assert scaled_residual(A, x, r.to_array()) <= 1e-10
    assert np.abs(x - ref).max() <= 1e-10 * np.abs(ref).max()
    xs = sequential_solve(m, r).to_array()
    assert np.abs(x - xs).max() <= 1e-9 * np.abs(xs).max()


def test_p1_delegates_to_sequential():
    m = random_spd_bta(6, 2, 1, seed=0)
    r = random_rhs(m)
    assert np.array_equal(solve(m, r, PartitionPlan.single(6)).to_array(), sequential_solve(m, r).to_array())


def test_determinism_bitwise():
    m = random_spd_bta(30, 4, 2, seed=5)
    r = random_rhs(m, seed=6)
    plan = optimal_partition(30, 4)
    first = solve(m, r, plan).to_array()
    with ThreadPoolExecutor(4) as ex:
        for _ in range(5):
            assert np.array_equal(solve(m, r, plan, executor=ex).to_array(), first)


def test_plan_errors():
    m = random_spd_bta(5, 2, seed=0)
    r = random_rhs(m)
    with pytest.raises(PlanError):
        solve(m, r, PartitionPlan(3, (1, 1, 1)))  # M < 2p
    with pytest.raises(PlanError):
        solve(m, r, PartitionPlan(2, (2, 1)))  # covers 4 stages
    with pytest.raises(PlanError):
        factorize_parallel(make_layout(m, PartitionPlan(2, (2, 2))), 3)


def test_nonconforming_rhs():
    m = random_spd_bta(6, 2, seed=0)
    with pytest.raises(DimensionError):
        solve(m, BlockVector([np.ones(3)] * 6), PartitionPlan(2, (3, 2)))


def test_spd_failure_is_located():
    diag = [np.eye(1) * 2] * 6
    diag[4] = -np.eye(1)
    m = BlockTridiagArrowMatrix(diag, [np.zeros((1, 1))] * 5)
    with pytest.raises(NotPositiveDefiniteError, match="segment 1, stage 1"):
        solve(m, BlockVector([[1.0]] * 6), PartitionPlan(2, (2, 3)))
    diag = [np.eye(1) * 2] * 6
    diag[2] = -np.eye(1)
    m = BlockTridiagArrowMatrix(diag, [np.zeros((1, 1))] * 5)
    with pytest.raises(NotPositiveDefiniteError, match="separator 1"):
        solve(m, BlockVector([[1.0]] * 6), PartitionPlan(2, (2, 3)))


# --------------------------------------------------------------------------
# per-phase flop tallies, exact rationals


def phase_tallies(M, b, lengths):
    plan = PartitionPlan(len(lengths), lengths)
    m = random_spd_bta(M, b, seed=1)
    ff, sf = PhaseFlops.for_plan(plan), PhaseFlops.for_plan(plan)
    solve_timed(m, random_rhs(m), plan, factor_flops=ff, solve_flops=sf)
    return plan, ff, sf


@pytest.mark.parametrize("M,b,lengths", [(20, 2, (8, 3, 3, 3)), (13, 1, (4, 3, 4)), (9, 3, (4, 4))])
def test_phase_flops_closed_form(M, b, lengths):
    plan, ff, sf = phase_tallies(M, b, lengths)
    p = plan.p
    b3, b2 = b**3, b**2
    for k, n in enumerate(lengths):
        if k == 0:
            want_f, want_s = Fraction(7, 3) * n - 1, 5 * n - 2
        elif k < p - 1:
            want_f, want_s = Fraction(19, 3) * n - 1, 9 * n - 2
        else:
            want_f, want_s = Fraction(19, 3) * n - 4, 9 * n - 4
        assert ff.segments[k].total == want_f * b3
        assert sf.segments[k].total == want_s * b2
    assert ff.sequential.total == (Fraction(10, 3) * p - Fraction(16, 3)) * b3
    assert sf.sequential.total == (7 * p - 11) * b2


def test_solve_timed_reports_positive_times():
    m = random_spd_bta(12, 3, 1, seed=0)
    x, t = solve_timed(m, random_rhs(m), PartitionPlan(2, (6, 5)))
    assert t.factor > 0 and t.solve > 0 and t.other >= 0
    assert t.total == pytest.approx(t.factor + t.solve + t.other)
