"""Command-line front end: solve problem files, fly landings, run batches.

Exit codes: 0 success, 2 infeasibility certificate, 3 solver/guidance failure,
64 unusable input.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cones
from .ipm import (
    ProblemFormatError,
    SolverSettings,
    SolverStatus,
    cold_start,
    load_problem,
    solve,
)
from .kkt import KktSystem, build_normal_equations_baseline
from .scvx import SubproblemTemplate, initial_reference, sc_solve
from .scvx.params import BoundaryConditions, ConfigError, load_config

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_FAILURE = 3
EXIT_USAGE = 64


def _r(v) -> str:
    """Shortest round-trip decimal of a scalar."""
    return repr(float(v))

MC_SIGMA_POS = 500.0
MC_SIGMA_VEL = 50.0
MC_SIGMA_FUEL = 300.0
MC_CAP_WARM1 = 120
MC_CAP_DEFAULT = 30


def _parse_mode(text: str):
    """'cold' or 'warm:N' -> (mode, iteration cap)."""
    if text == "cold":
        return "cold", None
    if text.startswith("warm:"):
        cap = int(text.split(":", 1)[1])
        if cap < 1:
            raise ValueError("warm iteration cap must be >= 1")
        return "warm", cap
    raise ValueError(f"mode must be 'cold' or 'warm:N', got {text!r}")


# ---------------- solve ----------------

def cmd_solve(args) -> int:
    try:
        problem = load_problem(args.problem)
    except (ProblemFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    settings = SolverSettings(max_iterations=args.max_iter,
                              eps_feas=args.tol, eps_gap=args.tol)
    outcome = solve(problem, settings=settings)
    lines = [
        f"status {outcome.status.value}",
        f"iterations {outcome.iterations}",
        f"objective {_r(outcome.objective)}",
        f"primal_residual {_r(outcome.primal_residual)}",
        f"dual_residual {_r(outcome.dual_residual)}",
        f"gap {_r(outcome.gap)}",
        "x " + " ".join(_r(v) for v in outcome.x),
        "y " + " ".join(_r(v) for v in outcome.y),
        "s " + " ".join(_r(v) for v in outcome.s),
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if outcome.status == SolverStatus.OPTIMAL:
        return EXIT_OK
    if outcome.status in (SolverStatus.PRIMAL_INFEASIBLE, SolverStatus.DUAL_INFEASIBLE):
        print(outcome.status.value.replace("_", " "), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_FAILURE


# ---------------- land ----------------

def _write_trajectory_csv(path: Path, sim) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "Tx", "Ty", "Tz", "Gamma"])
        for i in range(sim.t.size):
            st = sim.states[i]
            thr = sim.thrust[i]
            w.writerow([_r(sim.t[i])] + [_r(v) for v in st] + [_r(v) for v in thr]
                       + [_r(np.linalg.norm(thr))])


def _write_plot_data(outdir: Path, sim) -> None:
    with (outdir / "velocity.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vx", "vy", "vz", "speed"])
        for i in range(sim.t.size):
            v = sim.states[i, 3:6]
            w.writerow([_r(sim.t[i])] + [_r(c) for c in v] + [_r(np.linalg.norm(v))])
    with (outdir / "thrust.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "magnitude", "tilt_deg", "azimuth_deg"])
        for i in range(sim.t.size):
            thr = sim.thrust[i]
            mag = float(np.linalg.norm(thr))
            tilt = math.degrees(math.atan2(math.hypot(thr[0], thr[2]), thr[1])) if mag > 0 else 0.0
            azim = math.degrees(math.atan2(thr[2], thr[0])) if mag > 0 else 0.0
            w.writerow([_r(sim.t[i]), _r(mag), _r(tilt), _r(azim)])
    with (outdir / "mass.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "m"])
        for i in range(sim.t.size):
            w.writerow([_r(sim.t[i]), _r(sim.states[i, 6])])


def _write_steps_csv(path: Path, steps) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "status", "ipm_iterations", "factorizations",
                    "solve_time", "build_time", "r_err", "v_err",
                    "fuel_remaining", "objective", "vc_max"])
        for s in steps:
            w.writerow([s.step, s.status, s.ipm_iterations, s.factorizations,
                        _r(s.solve_time), _r(s.build_time), _r(s.r_err),
                        _r(s.v_err), _r(s.fuel_remaining), _r(s.objective),
                        _r(s.vc_max)])


def cmd_land(args) -> int:
    try:
        params, bc, weights, n_iter = load_config(args.config)
        mode, cap = _parse_mode(args.mode)
        if args.eps_r is not None:
            weights = replace(weights, eps_r=args.eps_r)
        if args.eps_v is not None:
            weights = replace(weights, eps_v=args.eps_v)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    settings = SolverSettings(max_iterations=n_iter)
    max_steps = args.max_sc_steps
    if max_steps is None:
        max_steps = MC_CAP_WARM1 if (mode == "warm" and cap == 1) else MC_CAP_DEFAULT
    out = sc_solve(bc, params, weights, mode=mode, warm_iteration_cap=cap or 1,
                   settings=settings, max_sc_steps=max_steps)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_steps_csv(outdir / "sc_steps.csv", out.steps)
    report = [
        f"success {out.success}",
        f"reason {out.reason}",
        f"sc_steps {out.sc_steps}",
        f"total_ipm_iterations {out.total_ipm_iterations}",
        f"total_factorizations {out.total_factorizations}",
        f"total_time {_r(out.total_time)}",
    ]
    if out.simulation is not None:
        sim = out.simulation
        report += [
            f"r_err {_r(sim.r_err)}",
            f"v_err {_r(sim.v_err)}",
            f"fuel_remaining {_r(sim.fuel_remaining)}",
            f"t_f {_r(out.trajectory.t_f)}",
        ]
        _write_trajectory_csv(outdir / "trajectory.csv", sim)
        _write_plot_data(outdir, sim)
    (outdir / "report.txt").write_text("\n".join(report) + "\n")
    print("\n".join(report))
    return EXIT_OK if out.success else EXIT_FAILURE


# ---------------- montecarlo ----------------

@dataclass
class _McJob:
    run: int
    seed: int
    mode: str
    cap: int
    max_steps: int
    sigma_pos: float
    sigma_vel: float
    sigma_fuel: float


_MC_CONTEXT = {}


def _mc_init(config_path):
    params, bc, weights, n_iter = load_config(config_path)
    _MC_CONTEXT["params"] = params
    _MC_CONTEXT["bc"] = bc
    _MC_CONTEXT["weights"] = weights
    _MC_CONTEXT["settings"] = SolverSettings(max_iterations=n_iter)
    _MC_CONTEXT["template"] = SubproblemTemplate(params, weights)


def perturbed_conditions(bc: BoundaryConditions, params, job: _McJob) -> BoundaryConditions:
    """Gaussian perturbation from a counter-based stream: reproducible and
    independent of execution order."""
    rng = np.random.Generator(np.random.Philox(key=job.seed, counter=[0, 0, 0, job.run]))
    r0 = bc.r0 + rng.normal(0.0, 1.0, size=3) * job.sigma_pos
    v0 = bc.v0 + rng.normal(0.0, 1.0, size=3) * job.sigma_vel
    fuel0 = (bc.m0 - params.m_dry) + rng.normal(0.0, 1.0) * job.sigma_fuel
    return BoundaryConditions(r0=r0, v0=v0, m0=params.m_dry + fuel0, t_f0=bc.t_f0)


def _mc_run(job: _McJob):
    params = _MC_CONTEXT["params"]
    weights = _MC_CONTEXT["weights"]
    bc = perturbed_conditions(_MC_CONTEXT["bc"], params, job)
    t0 = time.perf_counter()
    out = sc_solve(bc, params, weights, mode=job.mode, warm_iteration_cap=job.cap,
                   settings=_MC_CONTEXT["settings"], template=_MC_CONTEXT["template"],
                   max_sc_steps=job.max_steps)
    wall = time.perf_counter() - t0
    sim = out.simulation
    return {
        "run": job.run,
        "mode": job.mode if job.mode == "cold" else f"warm:{job.cap}",
        "success": int(out.success),
        "wall_time": wall,
        "sc_steps": out.sc_steps,
        "ipm_iterations": out.total_ipm_iterations,
        "kkt_factorizations": out.total_factorizations,
        "fuel_remaining": sim.fuel_remaining if (out.success and sim is not None) else float("nan"),
        "r_err": sim.r_err if (out.success and sim is not None) else float("nan"),
        "v_err": sim.v_err if (out.success and sim is not None) else float("nan"),
    }


_MC_FIELDS = ["run", "mode", "success", "wall_time", "sc_steps", "ipm_iterations",
              "kkt_factorizations", "fuel_remaining", "r_err", "v_err"]


def aggregate_rows(rows):
    ok = [r for r in rows if r["success"]]
    mean = lambda key, sel: (float(np.mean([r[key] for r in sel])) if sel else float("nan"))
    return {
        "runs": len(rows),
        "success_rate": len(ok) / len(rows) if rows else float("nan"),
        "mean_wall_time": mean("wall_time", rows),
        "mean_sc_steps": mean("sc_steps", rows),
        "mean_fuel_remaining": mean("fuel_remaining", ok),
    }


def cmd_montecarlo(args) -> int:
    try:
        mode, cap = _parse_mode(args.mode)
        if args.runs < 1:
            raise ValueError("--runs must be >= 1")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _mc_init(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    max_steps = MC_CAP_WARM1 if (mode == "warm" and cap == 1) else MC_CAP_DEFAULT
    jobs = [
        _McJob(run=i, seed=args.seed, mode=mode, cap=cap or 1, max_steps=max_steps,
               sigma_pos=args.sigma_pos, sigma_vel=args.sigma_vel,
               sigma_fuel=args.sigma_fuel)
        for i in range(args.runs)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs, initializer=_mc_init,
                                 initargs=(args.config,)) as pool:
            rows = list(pool.map(_mc_run, jobs))
    else:
        rows = [_mc_run(j) for j in jobs]
    rows.sort(key=lambda r: r["run"])

    agg = aggregate_rows(rows)
    outpath = Path(args.out)
    outpath.parent.mkdir(parents=True, exist_ok=True)
    with outpath.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_MC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (_r(v) if isinstance(v, float) else v) for k, v in r.items()})
    summary = "\n".join(f"{k} {v}" for k, v in agg.items())
    Path(str(outpath) + ".summary").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


# ---------------- bench-sparsity ----------------

def cmd_bench_sparsity(args) -> int:
    try:
        params, bc, weights, n_iter = load_config(args.config)
        sizes = [int(t) for t in args.sizes.split(",")]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    settings = SolverSettings(max_iterations=n_iter)
    rows = []
    for kf in sizes:
        w = replace(weights, k_f=kf, k_fine=max(weights.k_fine, 10 * kf))
        template = SubproblemTemplate(params, w)
        ref = initial_reference(bc, params, w)
        problem = template.build(ref, bc)
        kkt = KktSystem(problem.A, problem.b, problem.c, problem.layout,
                        delta_reg=settings.delta_reg)
        unit = cold_start(problem.layout)
        scal = cones.compute_nt_scaling(unit.x, unit.s, problem.layout)
        baseline = build_normal_equations_baseline(problem.A, problem.layout, scal)

        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            problem = template.build(ref, bc)
            solve(problem, settings=settings, kkt_system=kkt)
            times.append(time.perf_counter() - t0)
        rows.append({
            "k_f": kf,
            "variables": template.n,
            "linear_cones": problem.layout.l,
            "soc_cones": problem.layout.m,
            "reformulated_nnz": kkt.B.full_nnz(),
            "reformulated_dim": kkt.dim,
            "baseline_nnz": baseline.nnz,
            "baseline_dim": baseline.n_rows,
            "median_solve_time": sorted(times)[1],
        })
        print(f"k_f={kf}: vars={template.n} reformulated {kkt.B.full_nnz()}/{kkt.dim} "
              f"baseline {baseline.nnz}/{baseline.n_rows} "
              f"median solve {sorted(times)[1]*1e3:.1f} ms")
    outpath = Path(args.out)
    outpath.parent.mkdir(parents=True, exist_ok=True)
    with outpath.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return EXIT_OK


# ---------------- entry point ----------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conedescent",
                                 description="Sparse SOCP solver and landing guidance")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a standard-form problem file")
    p.add_argument("problem")
    p.add_argument("--out", default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=60)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("land", help="run the landing scenario from a config file")
    p.add_argument("config")
    p.add_argument("--mode", default="cold")
    p.add_argument("--out", required=True)
    p.add_argument("--max-sc-steps", type=int, default=None)
    p.add_argument("--eps-r", type=float, default=None)
    p.add_argument("--eps-v", type=float, default=None)
    p.set_defaults(func=cmd_land)

    p = sub.add_parser("montecarlo", help="perturbed initial-condition batch")
    p.add_argument("config")
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="cold")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--sigma-pos", type=float, default=MC_SIGMA_POS)
    p.add_argument("--sigma-vel", type=float, default=MC_SIGMA_VEL)
    p.add_argument("--sigma-fuel", type=float, default=MC_SIGMA_FUEL)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("bench-sparsity", help="coefficient-matrix sparsity comparison")
    p.add_argument("config")
    p.add_argument("--sizes", default="30,50,100,200,300,400")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_sparsity)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
