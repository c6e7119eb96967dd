"""Minimum-curvature race line as a multistage QP with a global closure block.

Each track segment ``i`` carries a cubic spline pair with coefficients
``theta_i = [a_x, b_x, c_x, d_x, a_y, b_y, c_y, d_y]`` on ``s in [0, 1]``.
The closure of the loop is expressed through an 8-dimensional global
variable ``g`` that copies ``theta_0``; the last segment's end point and
derivatives must match the start encoded in ``g``.  This puts nonzero arrow
blocks on the first and last stage only.

The interior-point loop that would normally drive the QP is replaced by a
quadratic penalty method: each iteration assembles one SPD
block-tridiagonal-arrow system and takes a Newton step with the parallel
solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np
from scipy.interpolate import CubicSpline

from ..btam import BlockTridiagArrowMatrix, BlockVector, PartitionPlan
from ..par import SolveTimings, solve_timed
from .track import Frames, TrackData, compute_frames

log = logging.getLogger(__name__)

NX = 8  # spline coefficients per segment
NG = 8  # closure variables

# Rows evaluating value, first and second derivative of a cubic a+bs+cs^2+ds^3.
_AT0 = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 2, 0]])
_AT1 = np.array([[1.0, 1, 1, 1], [0, 1, 2, 3], [0, 0, 2, 6]])

_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _xy(rows: np.ndarray) -> np.ndarray:
    """Apply 1-D coefficient rows to both the x and the y cubic."""
    z = np.zeros_like(rows)
    return np.vstack([np.hstack([rows, z]), np.hstack([z, rows])])


START = _xy(_AT0)  # (6, 8): x(0), x'(0), x''(0), y(0), y'(0), y''(0)
END = _xy(_AT1)


@dataclass(eq=False)
class MultistageQPData:
    """Multistage QP with stage coupling and a global variable.

    Stages are 0-based.  Cost:
    ``sum_i 1/2 x_i'Q_i x_i + x_{i+1}'S_i x_i + g'T_i x_i + c_i'x_i + 1/2 g'Q_g g + c_g'g``.
    Equalities: ``A_i x_i + B_i x_{i+1} + E_i g = b_i`` (``B`` is ``None`` on
    the last stage).  Inequalities: ``C_i x_i + D_i x_{i+1} + F_i g <= h_i``.
    """

    Q: list
    S: list
    T: list
    c: list
    Qg: np.ndarray
    cg: np.ndarray
    A: list
    B: list
    E: list
    b: list
    C: list
    D: list
    F: list
    h: list

    @property
    def num_stages(self) -> int:
        return len(self.Q)

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(q.shape[0] for q in self.Q)

    @property
    def global_size(self) -> int:
        return self.Qg.shape[0]

    def objective(self, x, g: np.ndarray) -> float:
        X = np.asarray(x, dtype=np.float64)
        val = 0.5 * g @ self.Qg @ g + self.cg @ g
        val += 0.5 * np.einsum("ik,ikl,il->", X, np.stack(self.Q), X)
        val += np.einsum("ik,ik->", np.stack(self.c), X) + np.einsum("g,igk,ik->", g, np.stack(self.T), X)
        if len(X) > 1:
            val += np.einsum("il,ilk,ik->", X[1:], np.stack(self.S), X[:-1])
        return float(val)

    def _rows(self, kind: str) -> "_RowGroup":
        cache = self.__dict__.setdefault("_row_cache", {})
        if kind not in cache:
            mats = (self.A, self.B, self.E, self.b) if kind == "eq" else (self.C, self.D, self.F, self.h)
            cache[kind] = _RowGroup(*mats, self.stage_sizes, self.global_size)
        return cache[kind]

    def eq_residuals(self, x, g: np.ndarray) -> list:
        return self._rows("eq").split(self._rows("eq").apply(x, g))

    def ineq_values(self, x, g: np.ndarray) -> list:
        """``C x + D x_next + F g - h`` per stage; positive entries are violations."""
        return self._rows("ineq").split(self._rows("ineq").apply(x, g))


class _RowGroup:
    """Constraint rows ``J_i x_i + K_i x_{i+1} + L_i g - k_i`` stacked into
    zero-padded arrays so that all stages are evaluated at once.  Padding rows
    are identically zero and never count as violated."""

    def __init__(self, J, K, L, rhs, sizes, ng):
        if len(set(sizes)) != 1:
            raise ValueError("stacked constraint rows need uniform stage sizes")
        N, n = len(sizes), sizes[0]
        self.counts = np.array([j.shape[0] for j in J])
        r = int(self.counts.max())
        self.J = np.zeros((N, r, n))
        self.K = np.zeros((N, r, n))
        self.L = np.zeros((N, r, ng))
        self.rhs = np.zeros((N, r))
        for i in range(N):
            c = self.counts[i]
            self.J[i, :c] = J[i]
            if K[i] is not None:
                self.K[i, :c] = K[i]
            self.L[i, :c] = L[i]
            self.rhs[i, :c] = rhs[i]
        self.mask = np.arange(r)[None, :] < self.counts[:, None]

    def apply(self, x, g) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.einsum("irk,ik->ir", self.J, x) - self.rhs + self.L @ g
        out[:-1] += np.einsum("irk,ik->ir", self.K[:-1], x[1:])
        return out

    def split(self, vals: np.ndarray) -> list:
        return [vals[i, :c] for i, c in enumerate(self.counts)]

    def flat(self, vals: np.ndarray) -> np.ndarray:
        return vals[self.mask]


@dataclass(eq=False)
class RaceLineProblem:
    track: TrackData
    frames: Frames
    qp: MultistageQPData
    curvature_weights: np.ndarray  # (N, 8, 8), objective = sum theta_i' W_i theta_i
    sampling: str = "knot"

    @property
    def num_stages(self) -> int:
        return len(self.track)


def curvature_weight(x1: float, y1: float) -> np.ndarray:
    """2x2 matrix ``P`` with ``kappa^2 = [x'', y''] P [x'', y'']^T`` for fixed
    first derivatives ``(x1, y1)``."""
    z = (x1 * x1 + y1 * y1) ** 3
    return np.array([[y1 * y1, -x1 * y1], [-x1 * y1, x1 * x1]]) / z


def _second_derivative_rows(s: float) -> np.ndarray:
    """(2, 8) map from theta to [x''(s), y''(s)]."""
    row = np.array([[0.0, 0.0, 2.0, 6.0 * s]])
    return _xy(row)


def _sample_points(sampling: str) -> tuple[tuple[float, float], ...]:
    if sampling == "knot":
        return ((0.0, 1.0),)
    if sampling == "gauss2":
        return tuple((s, 0.5) for s in _GAUSS2)
    raise ValueError(f"unknown curvature sampling rule {sampling!r}")


def build_raceline_qp(track: TrackData, frames: Frames | None = None, sampling: str = "knot") -> RaceLineProblem:
    """Assemble curvature objective, spline continuity, closure through the
    global block, knot-on-normal equalities and track-boundary inequalities."""
    frames = compute_frames(track) if frames is None else frames
    N = len(track)
    pts = track.points
    t, n, L = frames.tangents, frames.normals, frames.lengths
    samples = _sample_points(sampling)

    W = np.empty((N, NX, NX))
    for i in range(N):
        P = curvature_weight(L[i] * t[i, 0], L[i] * t[i, 1])
        W[i] = sum(w * J.T @ P @ J for s, w in samples for J in [_second_derivative_rows(s)])

    Z = np.zeros
    A, B, E, b, C, D, F, h = [], [], [], [], [], [], [], []
    pos_row = np.zeros((2, NX))
    pos_row[0, 0] = pos_row[1, 4] = 1.0  # picks (a_x, a_y)
    for i in range(N):
        tan_row = t[i] @ pos_row
        tan_rhs = t[i] @ pts[i]
        if i < N - 1:
            Ai, Bi, Ei, bi = [END, tan_row[None]], [-START, Z((1, NX))], [Z((6, NG)), Z((1, NG))], [Z(6), [tan_rhs]]
        else:
            # closure: end of the last segment equals the start stored in g
            Ai, Bi, Ei, bi = [END, tan_row[None]], None, [-START, Z((1, NG))], [Z(6), [tan_rhs]]
        if i == 0:
            # g copies theta_0
            Ai.append(-np.eye(NX))
            Bi.append(Z((NX, NX)))
            Ei.append(np.eye(NG))
            bi.append(Z(NX))
        A.append(np.vstack(Ai))
        B.append(None if Bi is None else np.vstack(Bi))
        E.append(np.vstack(Ei))
        b.append(np.concatenate([np.atleast_1d(v) for v in bi]))

        nrm_row = n[i] @ pos_row
        off = n[i] @ pts[i]
        C.append(np.vstack([nrm_row, -nrm_row]))
        D.append(None if i == N - 1 else Z((2, NX)))
        F.append(Z((2, NG)))
        h.append(np.array([track.widths[i, 1] + off, track.widths[i, 0] - off]))

    qp = MultistageQPData(
        Q=[2.0 * W[i] for i in range(N)],
        S=[Z((NX, NX)) for _ in range(N - 1)],
        T=[Z((NG, NX)) for _ in range(N)],
        c=[Z(NX) for _ in range(N)],
        Qg=Z((NG, NG)),
        cg=Z(NG),
        A=A, B=B, E=E, b=b, C=C, D=D, F=F, h=h,
    )
    return RaceLineProblem(track, frames, qp, W, sampling)


def centerline_spline(track: TrackData) -> tuple[np.ndarray, np.ndarray]:
    """Closed C2 spline through the centerline points (uniform parameter).

    Returns ``(theta, g)`` with ``theta`` of shape (N, 8) and ``g = theta[0]``.
    """
    N = len(track)
    pts = np.vstack([track.points, track.points[:1]])
    cs = CubicSpline(np.arange(N + 1), pts, bc_type="periodic")
    c = cs.c  # (4, N, 2), highest power first
    theta = np.empty((N, NX))
    for d in range(2):
        theta[:, 4 * d : 4 * d + 4] = c[::-1, :, d].T
    return theta, theta[0].copy()


def curvature_objective(theta: np.ndarray, problem: RaceLineProblem) -> float:
    """Sum of squared (approximate) curvatures at the sampling points."""
    theta = np.asarray(theta)
    return float(np.einsum("ij,ijk,ik->", theta, problem.curvature_weights, theta))


def knot_curvature(theta: np.ndarray) -> np.ndarray:
    """Exact signed curvature of each spline segment at ``s = 0``."""
    x1, y1 = theta[:, 1], theta[:, 5]
    x2, y2 = 2 * theta[:, 2], 2 * theta[:, 6]
    return (x1 * y2 - x2 * y1) / (x1 * x1 + y1 * y1) ** 1.5


def circle_knot_objective(line_radius: float, track_radius: float, segments: int) -> float:
    """Closed-form objective of the concentric circle spline of radius
    ``line_radius`` on a circular track of radius ``track_radius``.

    The uniform periodic cubic spline through ``segments`` equally spaced
    points on a circle has radial second derivative of magnitude
    ``12 (1 - cos phi) / (4 + 2 cos phi) * r`` at each knot; the weights use
    the centerline chord ``2 R sin(phi / 2)``.
    """
    phi = 2 * np.pi / segments
    m = 12 * (1 - np.cos(phi)) / (4 + 2 * np.cos(phi)) * line_radius
    chord = 2 * track_radius * np.sin(phi / 2)
    return segments * m * m / chord**4


# --------------------------------------------------------------------------
# penalty KKT


def assemble_penalty_kkt(
    problem: RaceLineProblem | MultistageQPData,
    theta,
    g=None,
    rho: float = 10.0,
    delta: float = 1e-8,
) -> tuple[BlockTridiagArrowMatrix, BlockVector]:
    """Newton system of the quadratic-penalty function at the current point.

    ``Psi = H + delta I + rho (J_eq' J_eq + J_act' J_act)`` and ``r`` is minus
    the penalty gradient, where ``J_act`` holds the inequality rows violated
    at the current point.  ``Psi`` is block-tridiagonal with an arrow.
    """
    if delta <= 0:
        raise ValueError("regularization delta must be positive")
    qp = problem.qp if isinstance(problem, RaceLineProblem) else problem
    x = [np.asarray(v, dtype=np.float64) for v in theta]
    if g is None:
        raise ValueError("global variable value g is required")
    g = np.asarray(g, dtype=np.float64)
    N = qp.num_stages
    ng = qp.global_size

    X = np.vstack(x)
    eqg, ing = qp._rows("eq"), qp._rows("ineq")
    eq = eqg.apply(X, g)
    iv = ing.apply(X, g)
    act = (iv > 0).astype(np.float64)
    viol = iv * act

    diag = np.stack(qp.Q) + delta * np.eye(X.shape[1])
    sub = np.stack(qp.S) if N > 1 else np.zeros((0,) + diag.shape[1:])
    arrow = np.stack(qp.T)
    corner = qp.Qg + delta * np.eye(ng)
    grad = np.einsum("ikl,il->ik", diag - delta * np.eye(X.shape[1]), X) + np.stack(qp.c) + np.einsum("igk,g->ik", arrow, g)
    grad_g = qp.Qg @ g + qp.cg + np.einsum("igk,ik->g", arrow, X)
    if N > 1:
        grad[:-1] += np.einsum("ilk,il->ik", sub, X[1:])
        grad[1:] += np.einsum("ikl,il->ik", sub, X[:-1])

    # each row group couples (x_i, x_{i+1}, g); penalize it as a whole
    for grp, res, w in ((eqg, eq, None), (ing, viol, act)):
        J, K, L = grp.J, grp.K, grp.L
        if w is not None:
            J, K, L = J * w[..., None], K * w[..., None], L * w[..., None]
        diag += rho * np.einsum("irk,irl->ikl", J, J)
        diag[1:] += rho * np.einsum("irk,irl->ikl", K[:-1], K[:-1])
        sub += rho * np.einsum("irk,irl->ikl", K[:-1], J[:-1])
        arrow += rho * np.einsum("irg,irk->igk", L, J)
        arrow[1:] += rho * np.einsum("irg,irk->igk", L[:-1], K[:-1])
        corner = corner + rho * np.einsum("irg,irh->gh", L, L)
        grad += rho * np.einsum("irk,ir->ik", J, res)
        grad[1:] += rho * np.einsum("irk,ir->ik", K[:-1], res[:-1])
        grad_g = grad_g + rho * np.einsum("irg,ir->g", L, res)

    m = BlockTridiagArrowMatrix(diag, sub, arrow, corner)
    r = BlockVector(list(-grad), -grad_g)
    return m, r


def merit(qp: MultistageQPData, x, g, rho: float) -> float:
    """Penalty function ``objective + rho/2 (|eq|^2 + |ineq violation|^2)``."""
    eq = qp._rows("eq").apply(x, g)
    viol = np.maximum(qp._rows("ineq").apply(x, g), 0.0)
    return qp.objective(list(x), g) + 0.5 * rho * (np.sum(eq * eq) + np.sum(viol * viol))


@dataclass
class IterationReport:
    iteration: int
    rho: float
    objective: float
    eq_residual: float
    max_violation: float
    merit_final_rho: float
    timings: SolveTimings = field(default_factory=SolveTimings)
    assembly: float = 0.0
    solves: int = 1


@dataclass
class PenaltyResult:
    theta: np.ndarray
    g: np.ndarray
    history: list[IterationReport]
    centerline_objective: float

    @property
    def objective(self) -> float:
        return self.history[-1].objective if self.history else self.centerline_objective


def _status(problem: RaceLineProblem, theta, g) -> tuple[float, float, float]:
    qp = problem.qp
    eq = qp._rows("eq").apply(theta, g)
    iv = qp._rows("ineq").apply(theta, g)
    return curvature_objective(theta, problem), float(np.abs(eq).max()), float(max(iv.max(), 0.0))


def _line_search(qp: MultistageQPData, theta, g, d, dg, rho: float) -> float:
    """Exact minimiser over ``[0, 1]`` of the penalty function along ``(d, dg)``.

    Along a line the penalty function is a convex piecewise quadratic, so its
    derivative is nondecreasing and piecewise linear; the root is bracketed
    and refined by bisection.
    """
    eqg, ing = qp._rows("eq"), qp._rows("ineq")
    e0 = eqg.apply(theta, g)
    ed = eqg.apply(theta + d, g + dg) - e0
    v0 = ing.apply(theta, g)
    vd = ing.apply(theta + d, g + dg) - v0
    f0 = qp.objective(theta, g)
    f1 = qp.objective(theta + d, g + dg)
    fm = qp.objective(theta - d, g - dg)
    # objective along the line is f0 + a*lin + a^2/2*quad
    lin = 0.5 * (f1 - fm) + rho * np.sum(ed * e0)
    quad = (f1 + fm - 2.0 * f0) + rho * np.sum(ed * ed)
    v0, vd = v0.ravel(), vd.ravel()

    def slope(a: float) -> float:
        return lin + a * quad + rho * (np.maximum(v0 + a * vd, 0.0) @ vd)

    if slope(1.0) <= 0.0:
        return 1.0
    if slope(0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def raceline_penalty_solve(
    problem: RaceLineProblem,
    iterations: int = 6,
    rho0: float = 10.0,
    rho_factor: float = 10.0,
    delta: float = 1e-8,
    plan: PartitionPlan | None = None,
    executor=None,
    max_inner: int = 6,
    damping: float = 1e-3,
    step_tol: float = 1e-10,
) -> PenaltyResult:
    """Penalty iterations from the centerline spline, ``rho_k = rho0 * rho_factor**k``.

    For each weight the penalty function is minimised by damped Newton
    steps ``Theta <- Theta + alpha * solve(Psi + mu I, r)``.  The proximal
    weight ``mu`` starts at ``damping * rho`` and shrinks tenfold after every
    full step; it keeps the nearly free lateral modes of the line from jumping
    across the boundary, where the hinge curvature is not yet seen.  ``alpha``
    comes from an exact line search.  At most ``max_inner`` systems are
    solved per weight.
    """
    N = problem.num_stages
    plan = PartitionPlan.single(N) if plan is None else plan
    qp = problem.qp
    theta, g = centerline_spline(problem.track)
    obj0 = curvature_objective(theta, problem)
    rho_final = rho0 * rho_factor ** max(iterations - 1, 0)
    history: list[IterationReport] = []

    for k in range(iterations):
        rho = rho0 * rho_factor**k
        mu = damping * rho
        timings = SolveTimings()
        t_asm = 0.0
        inner = 0
        while inner < max_inner:
            t0 = perf_counter()
            m, r = assemble_penalty_kkt(problem, theta, g, rho, delta + mu)
            t_asm += perf_counter() - t0
            dx, t = solve_timed(m, r, plan, executor=executor)
            timings = timings + t
            inner += 1
            d = np.vstack(dx.stages)
            if not (np.all(np.isfinite(d)) and np.all(np.isfinite(dx.glob))):
                raise FloatingPointError(f"penalty iteration {k} produced a non-finite step")
            t0 = perf_counter()
            alpha = _line_search(qp, theta, g, d, dx.glob, rho)
            t_asm += perf_counter() - t0
            theta = theta + alpha * d
            g = g + alpha * dx.glob
            if alpha == 1.0:
                mu *= 0.1
            if alpha * max(np.abs(d).max(), np.abs(dx.glob).max()) <= step_tol:
                break
        obj, eq, viol = _status(problem, theta, g)
        if not (np.isfinite(obj) and np.isfinite(eq)):
            raise FloatingPointError(f"penalty iteration {k} diverged (objective {obj}, residual {eq})")
        rep = IterationReport(k, rho, obj, eq, viol, merit(qp, theta, g, rho_final), timings, t_asm, inner)
        log.info("iter %d rho=%.1e solves=%d obj=%.6g eq=%.2e viol=%.2e", k, rho, inner, obj, eq, viol)
        history.append(rep)
    return PenaltyResult(theta, g, history, obj0)


def raceline_rows(problem: RaceLineProblem, theta: np.ndarray) -> list[tuple]:
    """Output rows: knot index, x, y, lateral offset n'r, curvature."""
    pos = theta[:, [0, 4]]
    lat = np.einsum("ij,ij->i", problem.frames.normals, pos - problem.track.points)
    kap = knot_curvature(theta)
    return [(i, pos[i, 0], pos[i, 1], lat[i], kap[i]) for i in range(len(theta))]
