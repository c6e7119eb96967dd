import csv
import io
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from parkkt import planner
from parkkt.btam import BlockTridiagArrowMatrix, BlockVector
from parkkt.cli import BENCH_COLUMNS, main
from parkkt.formats import load_vector, save_matrix, save_vector
from parkkt.gen.raceline import circle_knot_objective
from parkkt.gen.synthetic import random_rhs, random_spd_bta
from parkkt.gen.track import save_track, circle_track


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def _kv(text):
    out = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) >= 2:
            out[parts[0]] = parts[1:]
    return out


@pytest.fixture
def system(tmp_path):
    m = random_spd_bta(12, 3, 2, seed=9)
    r = random_rhs(m, seed=10)
    save_matrix(m, tmp_path / "m.json")
    save_vector(r, tmp_path / "r.json")
    return m, r, tmp_path


def test_solve_identity(tmp_path, capsys):
    m = BlockTridiagArrowMatrix([np.eye(2)] * 4, [np.zeros((2, 2))] * 3)
    r = BlockVector([np.arange(2.0) + i for i in range(4)])
    save_matrix(m, tmp_path / "m.json")
    save_vector(r, tmp_path / "r.json")
    assert main(["solve", "--matrix", str(tmp_path / "m.json"), "--rhs", str(tmp_path / "r.json")]) == 0
    out = capsys.readouterr().out
    info = _kv(out)
    assert info["path"][0] == "sequential"
    assert float(info["relative_residual"][0]) == 0.0
    values = [float(v) for v in out.splitlines()[7:]]
    assert values == list(r.to_array())


@pytest.mark.parametrize("threads", [1, 2, 3])
def test_solve_roundtrip(system, threads, capsys):
    m, r, d = system
    out = d / "x.json"
    code = main(["solve", "--matrix", str(d / "m.json"), "--rhs", str(d / "r.json"), "--threads", str(threads), "--out", str(out)])
    assert code == 0
    info = _kv(capsys.readouterr().out)
    assert info["path"][0] == ("sequential" if threads == 1 else "parallel")
    assert float(info["relative_residual"][0]) <= 1e-10
    from parkkt.btam import to_dense

    x = load_vector(out).to_array()
    ref = np.linalg.solve(to_dense(m), r.to_array())
    assert np.abs(x - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_solve_explicit_plan(system, capsys):
    _, _, d = system
    args = ["solve", "--matrix", str(d / "m.json"), "--rhs", str(d / "r.json"), "--threads", "3"]
    assert main(args + ["--plan", "2,4"]) == 0
    assert "plan 2,4,4" in capsys.readouterr().out
    assert main(args + ["--plan", "2,3"]) == 5


def test_exit_codes(system, tmp_path, capsys):
    _, _, d = system
    base = ["solve", "--matrix", str(d / "m.json"), "--rhs", str(d / "r.json")]
    assert main([]) == 2
    assert main(["solve"]) == 2
    assert main(base + ["--threads", "0"]) == 2
    assert main(["solve", "--matrix", str(tmp_path / "none.json"), "--rhs", str(d / "r.json")]) == 3
    (tmp_path / "bad.json").write_text("{")
    assert main(["solve", "--matrix", str(tmp_path / "bad.json"), "--rhs", str(d / "r.json")]) == 3
    assert main(base + ["--threads", "7"]) == 5
    # indefinite matrix
    m = BlockTridiagArrowMatrix([np.eye(2), -np.eye(2)], [np.zeros((2, 2))])
    save_matrix(m, tmp_path / "neg.json")
    save_vector(BlockVector([np.ones(2), np.ones(2)]), tmp_path / "ones.json")
    assert main(["solve", "--matrix", str(tmp_path / "neg.json"), "--rhs", str(tmp_path / "ones.json")]) == 4
    # right-hand side that does not fit
    assert main(["solve", "--matrix", str(d / "m.json"), "--rhs", str(tmp_path / "ones.json")]) == 3
    capsys.readouterr()


def test_bench_single_thread(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--stages", "20", "--block-size", "4", "--threads", "1", "--reps", "3", "--out", str(out)]) == 0
    rows = _csv(out.read_text())
    assert list(rows[0].keys()) == BENCH_COLUMNS
    (row,) = rows
    assert float(row["speedup_factor"]) == float(row["speedup_solve"]) == float(row["speedup_total"]) == 1.0
    assert Fraction(row["factor_flops"]) == planner.factor_flops_sequential(20)
    assert row["deterministic"] == "true"
    for k in ("factor", "solve"):
        assert float(row[f"{k}_mean"]) > 0 and float(row[f"{k}_std"]) >= 0


def test_bench_flops_match_model(capsys):
    assert main(["bench", "--stages", "40", "--block-size", "3", "--threads", "2,4", "--reps", "2"]) == 0
    for row in _csv(capsys.readouterr().out):
        plan = planner.optimal_partition(40, int(row["p"]))
        assert Fraction(row["factor_flops"]) == Fraction(row["factor_flops_model"]) == planner.factor_phase_model(plan).critical_path
        assert Fraction(row["solve_flops"]) == Fraction(row["solve_flops_model"]) == planner.solve_phase_model(plan).critical_path
        assert row["deterministic"] == "true"


def test_bench_rejects_infeasible_threads(capsys):
    assert main(["bench", "--stages", "5", "--block-size", "2", "--threads", "4", "--reps", "1"]) == 5


def test_theory_table2(capsys):
    assert main(["theory", "--mode", "table2", "--p", "2,4,14"]) == 0
    cap = capsys.readouterr()
    rows = {r["p"]: r for r in _csv(cap.out)}
    p4 = rows["4"]
    assert (p4["gamma_max_2dp"], p4["N_gamma2"], p4["N_gamma3"], p4["N_gamma4"], p4["N_90"]) == (
        "2.11", "83", "unattainable", "unattainable", "43")
    assert Fraction(p4["gamma_max"]) == pytest.approx(float(Fraction(40, 19)))
    assert rows["2"]["N_gamma2"] == "unattainable" and rows["2"]["gamma_max_2dp"] == "1.37"
    assert rows["14"]["N_gamma2"] == "53" and rows["14"]["reported_N_gamma2"] == "52"
    assert "mismatch" in cap.err and rows["4"]["mismatch"] == ""


def test_theory_grid(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["theory", "--mode", "grid", "--p", "4", "--N", "5:8", "--out", str(out)]) == 0
    rows = {int(r["N"]): r for r in _csv(out.read_text())}
    assert rows[5]["status"] == "infeasible" and rows[5]["gamma_factor"] == ""
    assert rows[8]["status"] == "ok"
    assert main(["theory", "--p", "a:b"]) == 2


def test_raceline_circle(tmp_path, capsys):
    out = tmp_path / "line.csv"
    assert main(["raceline", "--synthetic", "circle:120", "--threads", "2", "--out", str(out)]) == 0
    info = _kv(capsys.readouterr().out)
    assert float(info["analytic_objective"][2]) <= 0.01
    final = float(info["final_objective"][0])
    ref = circle_knot_objective(48.0, 50.0, 120)
    assert abs(final - ref) <= 0.01 * ref
    rows = _csv(out.read_text())
    assert len(rows) == 120
    # the line hugs the inner boundary (normals point outward)
    assert all(-2.0 - 1e-6 <= float(r["lateral_offset"]) <= -1.9 for r in rows)


def test_raceline_from_file(tmp_path, capsys):
    save_track(circle_track(30.0, 60, 1.0), tmp_path / "c.csv")
    assert main(["raceline", "--track", str(tmp_path / "c.csv"), "--iters", "2"]) == 0
    report = capsys.readouterr().out.split("stages")[0]
    assert len(_csv(report)) == 2


def test_raceline_errors(tmp_path, capsys):
    assert main(["raceline", "--track", str(tmp_path / "missing.csv")]) == 3
    assert main(["raceline", "--synthetic", "hexagon"]) == 2
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "parkkt", "theory", "--p", "4"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("p,gamma_max")
