"""Homogeneous self-dual predictor-corrector interior-point solver.

Solves  min c'x  s.t.  Ax = b, x in K  together with its dual through the
self-dual embedding z = (x, y, s, kappa, tau).  Each iteration computes one
Nesterov-Todd scaling and one factorization of the reduced system, then takes
a Mehrotra predictor-corrector step; tau/kappa expose optimality versus
primal/dual infeasibility certificates at termination.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cones
from .cones import ConeLayout, NotInteriorError
from .kkt import KktSolveError, KktSystem, NewtonDirection
from .sparse import RefinementDivergence, SparseMat
from .sparse import kernels

__all__ = [
    "SocpProblem",
    "HsdState",
    "SolverSettings",
    "SolverStatus",
    "SolveOutcome",
    "ProblemFormatError",
    "cold_start",
    "warm_start",
    "corrector_terms",
    "stopping_test",
    "solve",
    "load_problem",
    "dump_problem",
]


class ProblemFormatError(ValueError):
    """Malformed standard-form problem file."""


@dataclass
class SocpProblem:
    """Standard-form problem data: min c'x s.t. Ax = b, x in K."""

    A: SparseMat
    b: np.ndarray
    c: np.ndarray
    layout: ConeLayout

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.A.n_cols != self.layout.n:
            raise ValueError("A width must match the cone layout")
        if self.b.shape != (self.A.n_rows,) or self.c.shape != (self.A.n_cols,):
            raise ValueError("b/c lengths must match A")
        if self.A.n_rows > self.A.n_cols:
            raise ValueError("more equality rows than variables")

    @property
    def norm_a_inf(self) -> float:
        rowsum = np.zeros(self.A.n_rows)
        np.add.at(rowsum, self.A.indices, np.abs(self.A.data))
        return float(rowsum.max()) if rowsum.size else 0.0


@dataclass
class HsdState:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    kappa: float
    tau: float
    fallback: bool = False   # set when a warm start was rejected

    def copy(self) -> "HsdState":
        return HsdState(self.x.copy(), self.y.copy(), self.s.copy(),
                        self.kappa, self.tau, self.fallback)


class SolverStatus(enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverSettings:
    max_iterations: int = 60
    delta0: float = 0.995          # fraction of the boundary step taken
    delta1: float = 0.9            # centering exponent cap
    eps_feas: float = 1e-8
    eps_gap: float = 1e-8
    eps_inf: float = 1e-10
    lambda0: float = 0.999         # warm-start blend floor
    delta_reg: float = 1e-8
    max_refine: int = 3
    iteration_cap: int | None = None   # early return with a usable iterate
    corrector_cross_term: bool = True  # False: square the scaled predictor dx
    validate_newton: bool = False      # track 5-block residuals per solve


@dataclass
class SolveOutcome:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    kappa: float
    tau: float
    iterations: int
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    usable: bool
    solve_time: float
    factorizations: int
    max_newton_residual: float = 0.0
    fallback_cold: bool = False


def cold_start(layout: ConeLayout) -> HsdState:
    """Symmetric unit initial point (e, 0, e, 1, 1)."""
    e = cones.unit_vector(layout)
    return HsdState(x=e.copy(), y=np.zeros(0), s=e.copy(), kappa=1.0, tau=1.0)


def warm_start(prev, problem: SocpProblem,
               settings: SolverSettings | None = None) -> HsdState:
    """Blend a previous (inexact) solution with the unit point.

    The blend weight grows with the problem's data norms so that large, slowly
    varying subproblem sequences keep most of the previous point; it is floored
    at ``lambda0``.  A previous point outside the cone falls back to a cold
    start with ``fallback`` set.
    """
    settings = settings or SolverSettings()
    if isinstance(prev, SolveOutcome):
        x_o, y_o, s_o = prev.x, prev.y, prev.s
    else:
        x_o, y_o, s_o = prev
    layout = problem.layout
    if x_o.shape != (layout.n,) or s_o.shape != (layout.n,) or y_o.shape != (problem.A.n_rows,):
        raise ValueError("previous solution does not conform to the problem layout")
    if not (cones.membership(x_o, layout) and cones.membership(s_o, layout)):
        state = cold_start(layout)
        state.y = np.zeros(problem.A.n_rows)
        state.fallback = True
        return state
    norm_b = float(np.max(np.abs(problem.b))) if problem.b.size else 0.0
    lam = max(1.0 - 1.0 / (problem.norm_a_inf + norm_b), settings.lambda0)
    e = cones.unit_vector(layout)
    kappa = max(float(x_o @ s_o) / layout.cone_count, 1e-10)
    return HsdState(
        x=lam * x_o + (1.0 - lam) * e,
        y=lam * y_o,
        s=lam * s_o + (1.0 - lam) * e,
        kappa=kappa,
        tau=1.0,
    )


def corrector_terms(direction: NewtonDirection, scal: cones.NtScaling,
                    cross_term: bool = True) -> tuple[np.ndarray, float]:
    """Second-order correction from the scaled predictor direction."""
    layout = scal.layout
    dxbar = cones.apply_scaling(scal, direction.dx, "D_inverse")
    dsbar = cones.apply_scaling(scal, direction.ds, "D") if cross_term else dxbar
    e_xs = cones.arrowhead_apply(dxbar, dsbar, layout)
    return e_xs, direction.dkappa * direction.dtau


def _residuals(state: HsdState, problem: SocpProblem):
    p, n = problem.A.shape
    ax = np.empty(p)
    kernels.csc_matvec(p, n, problem.A.indptr, problem.A.indices, problem.A.data, state.x, ax)
    aty = np.empty(n)
    kernels.csc_t_matvec(p, n, problem.A.indptr, problem.A.indices, problem.A.data, state.y, aty)
    return ax, aty


def stopping_test(state: HsdState, problem: SocpProblem,
                  settings: SolverSettings) -> SolverStatus | None:
    """Termination status at the current iterate, or None to continue."""
    ax, aty = _residuals(state, problem)
    tau, kappa = state.tau, state.kappa
    norm_b = float(np.max(np.abs(problem.b))) if problem.b.size else 0.0
    norm_c = float(np.max(np.abs(problem.c))) if problem.c.size else 0.0
    cx = float(problem.c @ state.x)
    by = float(problem.b @ state.y)

    p_res = float(np.max(np.abs(ax - problem.b * tau))) if ax.size else 0.0
    d_res = float(np.max(np.abs(aty + state.s - problem.c * tau)))
    gap = abs(cx - by)
    if (
        p_res / (tau * (1.0 + norm_b)) <= settings.eps_feas
        and d_res / (tau * (1.0 + norm_c)) <= settings.eps_feas
        and gap / (tau + abs(by)) <= settings.eps_gap
    ):
        return SolverStatus.OPTIMAL

    if tau <= settings.eps_inf * max(1.0, kappa):
        norm_a = problem.norm_a_inf
        norm_y = float(np.max(np.abs(state.y))) if state.y.size else 0.0
        norm_x = float(np.max(np.abs(state.x)))
        if by > 0.0:
            dual_feas = float(np.max(np.abs(aty + state.s)))
            if dual_feas <= settings.eps_feas * max(norm_y * norm_a, 1e-300):
                return SolverStatus.PRIMAL_INFEASIBLE
        if cx < 0.0:
            primal_feas = float(np.max(np.abs(ax))) if ax.size else 0.0
            if primal_feas <= settings.eps_feas * max(norm_x * norm_a, 1e-300):
                return SolverStatus.DUAL_INFEASIBLE
    return None


def _step_length(state: HsdState, d: NewtonDirection, layout: ConeLayout,
                 delta0: float) -> float:
    alpha = min(
        cones.max_step(state.x, d.dx, layout),
        cones.max_step(state.s, d.ds, layout),
    )
    if d.dtau < 0.0:
        alpha = min(alpha, state.tau / -d.dtau)
    if d.dkappa < 0.0:
        alpha = min(alpha, state.kappa / -d.dkappa)
    # scale by delta0 so the update stays strictly interior and <= delta0
    return delta0 * min(1.0, alpha)


def _final_metrics(state: HsdState, problem: SocpProblem):
    ax, aty = _residuals(state, problem)
    tau = state.tau
    norm_b = float(np.max(np.abs(problem.b))) if problem.b.size else 0.0
    norm_c = float(np.max(np.abs(problem.c))) if problem.c.size else 0.0
    cx = float(problem.c @ state.x)
    by = float(problem.b @ state.y)
    p_res = (float(np.max(np.abs(ax - problem.b * tau))) if ax.size else 0.0) / (tau * (1.0 + norm_b))
    d_res = float(np.max(np.abs(aty + state.s - problem.c * tau))) / (tau * (1.0 + norm_c))
    gap = abs(cx - by) / (tau + abs(by))
    return p_res, d_res, gap, cx / tau


def solve(problem: SocpProblem, init: HsdState | None = None,
          settings: SolverSettings | None = None,
          kkt_system: KktSystem | None = None) -> SolveOutcome:
    """Run the predictor-corrector loop from ``init`` (cold start by default)."""
    settings = settings or SolverSettings()
    layout = problem.layout
    t0 = time.perf_counter()

    state = (init.copy() if init is not None else cold_start(layout))
    if state.y.shape != (problem.A.n_rows,):
        if init is not None and state.y.size:
            raise ValueError("initial dual vector length mismatch")
        state.y = np.zeros(problem.A.n_rows)
    fallback = state.fallback

    if kkt_system is None:
        kkt_system = KktSystem(problem.A, problem.b, problem.c, layout,
                               delta_reg=settings.delta_reg, max_refine=settings.max_refine)
    else:
        kkt_system.update_problem(problem.A, problem.b, problem.c)
    fact_before = kkt_system.stats.factorizations
    max_resid = 0.0

    limit = settings.max_iterations
    if settings.iteration_cap is not None:
        limit = min(limit, settings.iteration_cap)

    status = SolverStatus.MAX_ITERATIONS
    iterations = 0
    stalled = 0
    try:
        for _ in range(limit):
            scal = cones.compute_nt_scaling(state.x, state.s, layout)
            kkt_system.assemble(scal)

            rhs_p = kkt_system.compute_rhs(state.x, state.y, state.s, state.kappa,
                                           state.tau, scal)
            d_p = kkt_system.solve_newton(rhs_p)
            if settings.validate_newton:
                max_resid = max(max_resid, kkt_system.newton_residual(d_p, rhs_p))
            alpha_p = _step_length(state, d_p, layout, settings.delta0)

            nu = min(settings.delta1, (1.0 - alpha_p) ** 2) * (1.0 - alpha_p)
            e_xs, e_kt = corrector_terms(d_p, scal, settings.corrector_cross_term)
            rhs_c = kkt_system.compute_rhs(state.x, state.y, state.s, state.kappa,
                                           state.tau, scal, e_xs=e_xs,
                                           e_kappatau=e_kt, nu=nu)
            d_c = kkt_system.solve_newton(rhs_c)
            if settings.validate_newton:
                max_resid = max(max_resid, kkt_system.newton_residual(d_c, rhs_c))
            alpha_c = _step_length(state, d_c, layout, settings.delta0)

            state.x += alpha_c * d_c.dx
            state.y += alpha_c * d_c.dy
            state.s += alpha_c * d_c.ds
            state.kappa += alpha_c * d_c.dkappa
            state.tau += alpha_c * d_c.dtau
            iterations += 1

            outcome = stopping_test(state, problem, settings)
            if outcome is not None:
                status = outcome
                break
            # vanishing steps mean the iterate sits at the numerical floor;
            # hand back the (usually near-optimal) point rather than grind on
            if max(alpha_p, alpha_c) < 1e-3:
                stalled += 1
                if stalled >= 2:
                    break
            else:
                stalled = 0
    except (NotInteriorError, KktSolveError, RefinementDivergence, FloatingPointError):
        status = SolverStatus.NUMERICAL_FAILURE

    tau = state.tau
    finite = bool(np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.s))
                  and np.all(np.isfinite(state.y)) and np.isfinite(tau) and tau > 0)
    if finite:
        p_res, d_res, gap, objective = _final_metrics(state, problem)
    else:
        p_res = d_res = gap = objective = float("nan")

    if status in (SolverStatus.PRIMAL_INFEASIBLE, SolverStatus.DUAL_INFEASIBLE):
        # certificate rays are reported unnormalized
        x_out, y_out, s_out = state.x.copy(), state.y.copy(), state.s.copy()
    elif finite:
        x_out, y_out, s_out = state.x / tau, state.y / tau, state.s / tau
    else:
        x_out, y_out, s_out = state.x, state.y, state.s

    usable = status == SolverStatus.OPTIMAL or (
        status == SolverStatus.MAX_ITERATIONS and finite
    )
    return SolveOutcome(
        status=status,
        x=x_out, y=y_out, s=s_out,
        kappa=state.kappa, tau=tau,
        iterations=iterations,
        objective=objective,
        primal_residual=p_res,
        dual_residual=d_res,
        gap=gap,
        usable=usable,
        solve_time=time.perf_counter() - t0,
        factorizations=kkt_system.stats.factorizations - fact_before,
        max_newton_residual=max_resid,
        fallback_cold=fallback,
    )


# ---------------- standard-form problem text format ----------------

def dump_problem(problem: SocpProblem, path) -> None:
    """Write 'socp n p l m', SOC dims, A in coordinate form, then b and c."""
    A = problem.A
    lines = [f"socp {problem.layout.n} {A.n_rows} {problem.layout.l} {problem.layout.m}"]
    lines.append(" ".join(str(d) for d in problem.layout.soc_dims))
    lines.append(str(A.nnz))
    for j in range(A.n_cols):
        for k in range(A.indptr[j], A.indptr[j + 1]):
            lines.append(f"{A.indices[k]} {j} {float(A.data[k])!r}")
    lines.extend(f"{float(v)!r}" for v in problem.b)
    lines.extend(f"{float(v)!r}" for v in problem.c)
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> SocpProblem:
    raw = Path(path).read_text().split("\n")
    try:
        head = raw[0].split()
        if len(head) != 5 or head[0] != "socp":
            raise ProblemFormatError("header must be 'socp n p l m'")
        n, p, l, m = (int(t) for t in head[1:])
        dims = tuple(int(t) for t in raw[1].split())
        if len(dims) != m:
            raise ProblemFormatError(f"expected {m} cone dimensions, found {len(dims)}")
        layout = ConeLayout(l=l, soc_dims=dims)
        if layout.n != n:
            raise ProblemFormatError("cone dimensions do not sum to n")
        nnz = int(raw[2])
        rows, cols, vals = [], [], []
        for line in raw[3: 3 + nnz]:
            i, j, v = line.split()
            rows.append(int(i)); cols.append(int(j)); vals.append(float(v))
        cursor = 3 + nnz
        b = np.array([float(raw[cursor + i]) for i in range(p)])
        cursor += p
        c = np.array([float(raw[cursor + i]) for i in range(n)])
        A = SparseMat.from_triplets(p, n, rows, cols, vals)
    except ProblemFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise ProblemFormatError(f"cannot parse problem file: {exc}") from exc
    return SocpProblem(A=A, b=b, c=c, layout=layout)
