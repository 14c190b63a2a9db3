"""Successive convexification loop for the landing problem.

Each step linearizes about the previous trajectory, solves one conic
subproblem (cold-started, or warm-started from the previous step's inexact
solution with a per-solve iteration cap), then flies the programmed thrust
through the nonlinear simulator.  The loop ends when the simulated landing
errors drop below the configured bounds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from ..ipm import (
    SolveOutcome,
    SolverSettings,
    cold_start,
    solve,
    warm_start,
)
from ..kkt import KktSystem
from .dynamics import SimulationResult, TrajectoryIterate, initial_reference, verify_fine_grid
from .params import BoundaryConditions, ScWeights, VehicleParams
from .subproblem import SubproblemTemplate

__all__ = ["ScStepStats", "ScOutcome", "sc_solve"]


@dataclass
class ScStepStats:
    step: int
    status: str
    ipm_iterations: int
    factorizations: int
    solve_time: float
    build_time: float
    r_err: float
    v_err: float
    fuel_remaining: float
    objective: float
    vc_max: float


@dataclass
class ScOutcome:
    success: bool
    reason: str
    trajectory: TrajectoryIterate | None
    simulation: SimulationResult | None
    sc_steps: int
    total_ipm_iterations: int
    total_factorizations: int
    total_time: float
    steps: list[ScStepStats] = field(default_factory=list)
    template: SubproblemTemplate | None = None


def sc_solve(bc: BoundaryConditions, params: VehicleParams, weights: ScWeights,
             mode: str = "cold", warm_iteration_cap: int = 1,
             settings: SolverSettings | None = None,
             template: SubproblemTemplate | None = None,
             max_sc_steps: int | None = None) -> ScOutcome:
    """Run the full guidance solve.

    ``mode`` is "cold" (every subproblem solved to optimality from the unit
    start) or "warm" (first subproblem cold, later ones started from the
    previous solution and capped at ``warm_iteration_cap`` iterations).
    """
    if mode not in ("cold", "warm"):
        raise ValueError(f"unknown mode {mode!r}")
    settings = settings or SolverSettings()
    cap = max_sc_steps if max_sc_steps is not None else weights.N_sc_max
    t_start = time.perf_counter()

    try:
        bc.validate_against(params)
    except ValueError as exc:
        return ScOutcome(success=False, reason=f"infeasible boundary data: {exc}",
                         trajectory=None, simulation=None, sc_steps=0,
                         total_ipm_iterations=0, total_factorizations=0,
                         total_time=time.perf_counter() - t_start)

    template = template or SubproblemTemplate(params, weights)
    ref = initial_reference(bc, params, weights)
    kkt: KktSystem | None = None
    prev: SolveOutcome | None = None
    steps: list[ScStepStats] = []
    total_iters = 0
    total_facts = 0

    for step in range(1, cap + 1):
        t0 = time.perf_counter()
        problem = template.build(ref, bc)
        build_time = time.perf_counter() - t0
        if kkt is None:
            kkt = KktSystem(problem.A, problem.b, problem.c, problem.layout,
                            delta_reg=settings.delta_reg,
                            max_refine=settings.max_refine)

        if mode == "warm" and prev is not None:
            init = warm_start(prev, problem, settings)
            step_settings = replace(settings, iteration_cap=warm_iteration_cap)
        else:
            init = cold_start(problem.layout)
            step_settings = settings

        outcome = solve(problem, init, step_settings, kkt_system=kkt)
        total_iters += outcome.iterations
        total_facts += outcome.factorizations

        if not outcome.usable:
            steps.append(ScStepStats(
                step=step, status=outcome.status.value,
                ipm_iterations=outcome.iterations,
                factorizations=outcome.factorizations,
                solve_time=outcome.solve_time, build_time=build_time,
                r_err=float("nan"), v_err=float("nan"),
                fuel_remaining=float("nan"), objective=outcome.objective,
                vc_max=float("nan"),
            ))
            return ScOutcome(
                success=False, reason=f"subproblem solver returned {outcome.status.value}",
                trajectory=None, simulation=None, sc_steps=step,
                total_ipm_iterations=total_iters, total_factorizations=total_facts,
                total_time=time.perf_counter() - t_start, steps=steps,
                template=template,
            )

        traj = template.extract_trajectory(outcome.x)
        sim = verify_fine_grid(traj, bc, params, weights)
        steps.append(ScStepStats(
            step=step, status=outcome.status.value,
            ipm_iterations=outcome.iterations,
            factorizations=outcome.factorizations,
            solve_time=outcome.solve_time, build_time=build_time,
            r_err=sim.r_err, v_err=sim.v_err,
            fuel_remaining=sim.fuel_remaining, objective=outcome.objective,
            vc_max=traj.penalties.get("vc_max", float("nan")),
        ))

        if sim.feasible and sim.r_err <= weights.eps_r and sim.v_err <= weights.eps_v:
            return ScOutcome(
                success=True, reason="landing errors within bounds",
                trajectory=traj, simulation=sim, sc_steps=step,
                total_ipm_iterations=total_iters, total_factorizations=total_facts,
                total_time=time.perf_counter() - t_start, steps=steps,
                template=template,
            )
        ref = traj
        prev = outcome

    return ScOutcome(
        success=False, reason=f"step cap ({cap}) exceeded",
        trajectory=ref, simulation=None, sc_steps=cap,
        total_ipm_iterations=total_iters, total_factorizations=total_facts,
        total_time=time.perf_counter() - t_start, steps=steps,
        template=template,
    )
