"""Command-line front end: ``parkkt {solve,bench,theory,raceline}``.

Exit codes: 0 success, 2 usage error, 3 I/O or parse error, 4 numerical
failure (matrix not positive definite, diverging iteration), 5 infeasible
partition plan.

All CSV output has a fixed header row and writes floats with 17 significant
digits.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from statistics import fmean, pstdev

import numpy as np
from threadpoolctl import threadpool_limits

from . import planner
from .btam import PartitionPlan, relative_residual
from .errors import DimensionError, FormatError, NotPositiveDefiniteError, PlanError, SingularFactorError
from .formats import load_matrix, load_vector, save_vector
from .gen.raceline import build_raceline_qp, circle_knot_objective, raceline_penalty_solve, raceline_rows
from .gen.synthetic import random_rhs, random_spd_bta
from .gen.track import circle_track, load_track, oval_track
from .kernels import FlopCounter
from .par import PhaseFlops, solve_timed

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_PLAN = 5

LOW_SPEEDUP = 1.3

BENCH_COLUMNS = [
    "M", "b", "n_g", "p", "N_1", "N_k", "reps",
    "factor_mean", "factor_std", "solve_mean", "solve_std", "other_mean", "other_std", "total_mean",
    "speedup_factor", "speedup_solve", "speedup_total", "gamma_factor_theory", "gamma_solve_theory",
    "factor_flops", "factor_flops_model", "solve_flops", "solve_flops_model",
    "deterministic", "flags",
]
TABLE2_COLUMNS = [
    "p", "gamma_max", "gamma_max_2dp", "N_gamma2", "N_gamma3", "N_gamma4", "N_90",
    "reported_gamma_max", "reported_N_gamma2", "reported_N_gamma3", "reported_N_gamma4", "reported_N_90",
    "mismatch",
]
GRID_COLUMNS = ["N", "p", "status", "N_1", "N_k", "gamma_factor", "gamma_solve"]
REPORT_COLUMNS = [
    "iteration", "rho", "solves", "objective", "eq_residual", "max_violation", "merit",
    "factor_s", "solve_s", "other_s",
]
RACELINE_COLUMNS = ["knot", "x", "y", "lateral_offset", "curvature"]
UNATTAINABLE = "unattainable"


def fmt(v) -> str:
    """CSV cell text: floats at 17 significant digits, fractions exact."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _write_rows(out, header, rows) -> None:
    w = _writer(out)
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _parse_plan(text: str, M: int, p: int) -> PartitionPlan:
    try:
        n1, nk = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--plan expects 'N1,Nk', got {text!r}") from None
    plan = PartitionPlan(p, (n1,) + (nk,) * (p - 1))
    plan.check(M)
    return plan


def _int_list(text: str) -> list[int]:
    """``"1,2,4"`` or ``"2:16"`` (inclusive) or ``"2:16:2"``."""
    try:
        if ":" in text:
            parts = [int(v) for v in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            step = parts[2] if len(parts) == 3 else 1
            return list(range(parts[0], parts[1] + 1, step))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list like '1,2,4' or a range like '2:16', got {text!r}") from None


def _executor(p: int):
    return ThreadPoolExecutor(max_workers=p) if p > 1 else None


# --------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    m = load_matrix(args.matrix)
    r = load_vector(args.rhs)
    M = m.num_stages
    p = args.threads
    plan = _parse_plan(args.plan, M, p) if args.plan else planner.optimal_partition(M, p)
    ex = _executor(plan.p)
    try:
        x, t = solve_timed(m, r, plan, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()
    res = relative_residual(m, x, r)
    if args.out:
        save_vector(x, args.out)
    path = "sequential" if plan.p == 1 else "parallel"
    print(f"stages M={M} block sizes {sorted(set(m.stage_sizes))} global n_g={m.global_size}")
    print(f"path {path} p={plan.p} plan {','.join(map(str, plan.seg_lengths))}")
    print(f"factor_s {fmt(t.factor)}")
    print(f"solve_s {fmt(t.solve)}")
    print(f"other_s {fmt(t.other)}")
    print(f"total_s {fmt(t.total)}")
    print(f"relative_residual {fmt(res)}")
    if not args.out:
        sys.stdout.write("".join(f"{fmt(v)}\n" for v in x.to_array()))
    return EXIT_OK


# --------------------------------------------------------------------------
# bench


def _measure(m, r, plan: PartitionPlan, reps: int):
    """Per-repetition timings, flop tallies of the first run and whether all
    repetitions returned bitwise-identical solutions."""
    ex = _executor(plan.p)
    times, first = [], None
    identical = True
    try:
        for rep in range(reps):
            if rep == 0:
                if plan.p == 1:
                    ff, sf = FlopCounter(), FlopCounter()
                else:
                    ff, sf = PhaseFlops.for_plan(plan), PhaseFlops.for_plan(plan)
                x, t = solve_timed(m, r, plan, executor=ex, factor_flops=ff, solve_flops=sf)
                first = x.to_array()
            else:
                x, t = solve_timed(m, r, plan, executor=ex)
                identical &= np.array_equal(first, x.to_array())
            times.append(t)
    finally:
        if ex is not None:
            ex.shutdown()
    crit = (lambda c: c.total) if plan.p == 1 else (lambda c: c.critical_path)
    return times, crit(ff), crit(sf), identical


def bench_rows(M: int, b: int, n_g: int, p_list, reps: int, seed: int) -> list[list]:
    if M < 1 or b < 1 or n_g < 0 or reps < 1:
        raise ValueError("bench needs M >= 1, b >= 1, n_g >= 0 and reps >= 1")
    m = random_spd_bta(M, b, n_g, seed=seed)
    r = random_rhs(m, seed=seed + 1)
    cores = os.cpu_count() or 1
    plans = {p: planner.optimal_partition(M, p) for p in p_list}
    rows = []
    with threadpool_limits(limits=1):
        base_times, *_ = _measure(m, r, PartitionPlan.single(M), reps)
        base = [fmean(getattr(t, k) for t in base_times) for k in ("factor", "solve")]
        base.append(fmean(t.total for t in base_times))
        for p in p_list:
            plan = plans[p]
            times, fflops, sflops, identical = _measure(m, r, plan, reps)
            cols = {k: [getattr(t, k) for t in times] for k in ("factor", "solve", "other")}
            total = fmean(t.total for t in times)
            sp = [base[0] / fmean(cols["factor"]), base[1] / fmean(cols["solve"]), base[2] / total]
            if p == 1:
                sp = [1.0, 1.0, 1.0]
            gf, gs = (Fraction(1), Fraction(1)) if p == 1 else planner.speedup(M, p)
            model_ok = n_g == 0
            flags = []
            if p > 1 and sp[0] < LOW_SPEEDUP:
                flags.append("low_speedup")
            if p > cores:
                flags.append("oversubscribed")
            rows.append([
                M, b, n_g, p, plan.seg_lengths[0], plan.seg_lengths[1] if p > 1 else None, reps,
                fmean(cols["factor"]), pstdev(cols["factor"]),
                fmean(cols["solve"]), pstdev(cols["solve"]),
                fmean(cols["other"]), pstdev(cols["other"]),
                total, sp[0], sp[1], sp[2], float(gf), float(gs),
                fflops / b**3, planner.factor_phase_model(plan).critical_path if model_ok else None,
                sflops / b**2, planner.solve_phase_model(plan).critical_path if model_ok else None,
                identical, ";".join(flags),
            ])
    return rows


def cmd_bench(args) -> int:
    p_list = args.threads_list
    for p in p_list:
        planner.optimal_partition(args.stages, p)
    rows = bench_rows(args.stages, args.block_size, args.global_size, p_list, args.reps, args.seed)
    out, close = _open_out(args.out)
    try:
        _write_rows(out, BENCH_COLUMNS, rows)
    finally:
        if close:
            out.close()
    flagged = [row for row in rows if row[-1]]
    for row in flagged:
        print(f"note: p={row[3]}: {row[-1]} (measured factor speedup {row[14]:.3g}, model {row[17]:.3g})", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# theory


def _cell(v):
    return UNATTAINABLE if v is None else v


def table2_rows(p_values) -> list[list]:
    rows = []
    for row in planner.table2(tuple(p_values)):
        ref = planner.REFERENCE_TABLE.get(row.p)
        mism = planner.table2_mismatches([row]) if ref else []
        refcells = (
            [f'{ref["gamma_max"]:.2f}', _cell(ref["n2"]), _cell(ref["n3"]), _cell(ref["n4"]), _cell(ref["n90"])]
            if ref
            else [None] * 5
        )
        rows.append([
            row.p, float(row.gamma_max), f"{float(row.gamma_max):.2f}",
            _cell(row.n_gamma2), _cell(row.n_gamma3), _cell(row.n_gamma4), _cell(row.n_90),
            *refcells, " | ".join(mism),
        ])
    return rows


def grid_rows(p_values, N_values) -> list[list]:
    rows = []
    for pt in planner.theory_grid(p_values, N_values):
        if not pt.feasible:
            rows.append([pt.N, pt.p, "infeasible", None, None, None, None])
        else:
            rows.append([pt.N, pt.p, "ok", pt.N_1, pt.N_k, float(pt.gamma_factor), float(pt.gamma_solve)])
    return rows


def cmd_theory(args) -> int:
    out, close = _open_out(args.out)
    try:
        if args.mode == "table2":
            p_values = args.p or [2, 4, 6, 8, 10, 12, 14, 16]
            rows = table2_rows(p_values)
            _write_rows(out, TABLE2_COLUMNS, rows)
            for row in rows:
                if row[-1]:
                    print(f"mismatch: {row[-1]}", file=sys.stderr)
        else:
            p_values = args.p or list(range(2, 17))
            N_values = args.N or list(range(10, 201))
            _write_rows(out, GRID_COLUMNS, grid_rows(p_values, N_values))
    finally:
        if close:
            out.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# raceline


def _synthetic_track(spec: str):
    name, _, rest = spec.partition(":")
    try:
        segments = int(rest) if rest else None
    except ValueError:
        raise argparse.ArgumentTypeError(f"--synthetic expects 'oval[:segments]' or 'circle[:segments]', got {spec!r}") from None
    if name == "oval":
        return oval_track(segments or 2356)
    if name == "circle":
        return circle_track(segments=segments or 360)
    raise argparse.ArgumentTypeError(f"unknown synthetic track {name!r} (use oval or circle)")


def cmd_raceline(args) -> int:
    if args.track:
        track = load_track(args.track)
    else:
        track = _synthetic_track(args.synthetic)
    problem = build_raceline_qp(track, sampling=args.sampling)
    N = problem.num_stages
    plan = planner.optimal_partition(N, args.threads)
    ex = _executor(plan.p)
    try:
        res = raceline_penalty_solve(problem, iterations=args.iters, plan=plan, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()

    report = [
        [h.iteration, h.rho, h.solves, h.objective, h.eq_residual, h.max_violation, h.merit_final_rho,
         h.timings.factor, h.timings.solve, h.timings.other + h.assembly]
        for h in res.history
    ]
    _write_rows(sys.stdout, REPORT_COLUMNS, report)
    tf = sum(r[7] for r in report)
    ts = sum(r[8] for r in report)
    to = sum(r[9] for r in report)
    print(f"stages {N} p={plan.p} plan {','.join(map(str, plan.seg_lengths))}")
    print(f"timing factor_s {fmt(tf)} solve_s {fmt(ts)} other_s {fmt(to)} total_s {fmt(tf + ts + to)}")
    print(f"centerline_objective {fmt(res.centerline_objective)}")
    print(f"final_objective {fmt(res.objective)}")
    if not args.track and args.synthetic.startswith("circle"):
        radius = float(np.linalg.norm(track.points[0]))
        ref = circle_knot_objective(radius - track.widths[0, 0], radius, N)
        print(f"analytic_objective {fmt(ref)} relative_error {fmt(abs(res.objective - ref) / ref)}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_rows(fh, RACELINE_COLUMNS, raceline_rows(problem, res.theta))
    return EXIT_OK


# --------------------------------------------------------------------------


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parkkt", description="Parallel block-tridiagonal-arrow KKT solver.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a system read from JSON files")
    s.add_argument("--matrix", required=True, help="matrix JSON file")
    s.add_argument("--rhs", required=True, help="right-hand side JSON file")
    s.add_argument("--out", help="write the solution as a vector JSON file (default: values to stdout)")
    s.add_argument("--threads", type=_positive, default=1, help="number of segments/threads p")
    s.add_argument("--plan", help="override segment lengths as 'N1,Nk'")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="time factorization and solves on a random system")
    b.add_argument("--stages", type=_positive, default=200, help="number of stages M")
    b.add_argument("--block-size", type=_positive, default=59, help="stage block size b")
    b.add_argument("--global-size", type=_nonneg, default=0, help="global block size n_g")
    b.add_argument("--threads", dest="threads_list", type=_int_list, default=[1, 2, 4], help="thread counts, e.g. '1,2,4'")
    b.add_argument("--reps", type=_positive, default=30, help="repetitions per thread count")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV output file (default stdout)")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("theory", help="model speedups: summary table or (N, p) grid")
    t.add_argument("--mode", choices=("table2", "grid"), default="table2")
    t.add_argument("--p", type=_int_list, help="thread counts, e.g. '2:16' or '2,4,8'")
    t.add_argument("--N", type=_int_list, help="horizons for grid mode, e.g. '10:200'")
    t.add_argument("--out", help="CSV output file (default stdout)")
    t.set_defaults(func=cmd_theory)

    r = sub.add_parser("raceline", help="minimum-curvature race line by penalty iterations")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--track", help="track CSV with columns x,y,w_l,w_r")
    src.add_argument("--synthetic", default="oval:2356", help="'oval[:segments]' or 'circle[:segments]'")
    r.add_argument("--threads", type=_positive, default=1)
    r.add_argument("--iters", type=_nonneg, default=6, help="penalty iterations")
    r.add_argument("--sampling", choices=("knot", "gauss2"), default="knot", help="curvature sampling rule")
    r.add_argument("--out", help="race line CSV output file")
    r.set_defaults(func=cmd_raceline)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        print(f"parkkt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanError as exc:
        print(f"parkkt: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except (NotPositiveDefiniteError, SingularFactorError, FloatingPointError) as exc:
        print(f"parkkt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError, DimensionError) as exc:
        print(f"parkkt: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"parkkt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
