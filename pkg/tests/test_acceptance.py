"""Acceptance suite: every criterion prints one PASS line when it holds.

Run standalone with `pytest tests/test_acceptance.py -v -s`.
"""

import csv
import time

import numpy as np
import pytest

from conedescent import cones
from conedescent.cli import main as cli_main
from conedescent.cones import ConeLayout
from conedescent.ipm import SolverSettings, SolverStatus, cold_start, solve
from conedescent.kkt import KktSystem, build_normal_equations_baseline
from conedescent.scvx import (
    SubproblemTemplate,
    initial_reference,
    sample_scenario,
    sc_solve,
    verify_fine_grid,
)
from conedescent.scvx.dynamics import (
    TrajectoryIterate,
    dynamics_jacobians,
    nonlinear_derivative,
)
from conedescent.scvx.params import BoundaryConditions, format_config
from conedescent.sparse import (
    RegularizationSettings,
    SparseMat,
    amd_order,
    numeric_ldl,
    solve_refined,
    symbolic_ldl,
)

from conftest import random_feasible_socp, random_interior
from dense_reference import DenseReference

CORPUS_SEED = 20240811
CORPUS_SIZE = 200


@pytest.fixture(scope="module")
def corpus_results():
    """Solve the whole random corpus once; criteria 1 and 2 share it."""
    rng = np.random.default_rng(CORPUS_SEED)
    results = []
    for _ in range(CORPUS_SIZE):
        problem, a_dense = random_feasible_socp(rng)
        outcome = solve(problem, settings=SolverSettings(validate_newton=True))
        results.append((problem, a_dense, outcome))
    return results


@pytest.fixture(scope="module")
def scenario():
    return sample_scenario()


@pytest.fixture(scope="module")
def cold_landing(scenario):
    params, bc, weights = scenario
    return sc_solve(bc, params, weights, mode="cold")


def test_criterion_1_solver_corpus(corpus_results):
    """200 random feasible SOCPs against the dense reference implementation."""
    worst_obj = 0.0
    for problem, a_dense, outcome in corpus_results:
        assert outcome.status == SolverStatus.OPTIMAL
        assert outcome.primal_residual <= 1e-8
        assert outcome.dual_residual <= 1e-8
        assert outcome.gap <= 1e-8
        reference = DenseReference(a_dense, problem.b, problem.c, problem.layout).solve()
        assert reference["status"] == "optimal"
        rel = abs(outcome.objective - reference["objective"]) / (
            1.0 + abs(reference["objective"]))
        worst_obj = max(worst_obj, rel)
        assert rel <= 1e-6
    print(f"\nACCEPTANCE 1 PASS: {CORPUS_SIZE} problems match the dense reference "
          f"(worst objective gap {worst_obj:.2e})")


def test_criterion_2_newton_oracle(corpus_results, rng):
    worst = max(out.max_newton_residual for _, _, out in corpus_results)
    assert worst <= 1e-9

    # direction equality against a dense LU of the full 5-block operator
    worst_dir = 0.0
    for _ in range(30):
        problem, a_dense = random_feasible_socp(rng)
        layout = problem.layout
        system = KktSystem(problem.A, problem.b, problem.c, layout)
        x = random_interior(rng, layout)
        s = random_interior(rng, layout)
        y = rng.normal(size=system.p)
        kappa, tau = 0.5 + rng.random(), 0.5 + rng.random()
        scal = cones.compute_nt_scaling(x, s, layout)
        system.assemble(scal)
        rhs = system.compute_rhs(x, y, s, kappa, tau, scal,
                                 e_xs=0.01 * rng.normal(size=layout.n),
                                 e_kappatau=0.01, nu=0.3)
        d = system.solve_newton(rhs)

        n, p = layout.n, system.p
        dmat = np.zeros((n, n))
        for j in range(n):
            ej = np.zeros(n); ej[j] = 1.0
            dmat[:, j] = cones.apply_scaling(scal, ej, "D")
        big = np.zeros((2 * n + p + 2, 2 * n + p + 2))
        big[:n, n:n + p] = a_dense.T
        big[:n, n + p:2 * n + p] = np.eye(n)
        big[:n, -1] = -problem.c
        big[n:n + p, :n] = a_dense
        big[n:n + p, -1] = -problem.b
        big[n + p:2 * n + p, :n] = np.eye(n)
        big[n + p:2 * n + p, n + p:2 * n + p] = dmat @ dmat
        big[-2, -2] = 1.0
        big[-2, -1] = kappa / tau
        big[-1, :n] = -problem.c
        big[-1, n:n + p] = problem.b
        big[-1, -2] = -1.0
        u_dense = np.linalg.solve(big, rhs.w0)
        u_fast = np.concatenate([d.dx, d.dy, d.ds, [d.dkappa, d.dtau]])
        worst_dir = max(worst_dir, np.max(np.abs(u_fast - u_dense))
                        / (1.0 + np.max(np.abs(u_dense))))
    assert worst_dir <= 1e-8
    print(f"\nACCEPTANCE 2 PASS: Newton residuals <= 1e-9 (worst {worst:.2e}); "
          f"directions match dense solves (worst {worst_dir:.2e})")


def test_criterion_3_sparsification_equivalence():
    worst = 0.0
    for dim in range(2, 17):
        gen = np.random.default_rng(1000 + dim)
        layout = ConeLayout(l=0, soc_dims=(dim,))
        for _ in range(100):
            x = random_interior(gen, layout)
            s = random_interior(gen, layout)
            scal = cones.compute_nt_scaling(x, s, layout)
            h2 = gen.normal(size=dim)
            direct = np.linalg.solve(scal.d2_block(0), h2)
            theta = scal.theta_of(0)
            pvec = scal.group_p[0][0]
            arrow = np.zeros((dim + 1, dim + 1))
            arrow[:dim, :dim] = np.diag(np.r_[-1.0, np.ones(dim - 1)])
            arrow[:dim, dim] = np.sqrt(2.0) * pvec
            arrow[dim, :dim] = np.sqrt(2.0) * pvec
            arrow[dim, dim] = -1.0
            arrow /= theta ** 2
            aug = np.linalg.solve(arrow, np.r_[h2, 0.0])
            worst = max(worst, float(np.max(np.abs(aug[:dim] - direct))
                                     / (1.0 + np.max(np.abs(direct)))))
    assert worst <= 1e-10

    # arrow storage engages exactly at dimension 4
    gen = np.random.default_rng(7)
    layout = ConeLayout(l=1, soc_dims=(2, 3, 4, 5))
    a_dense = gen.normal(size=(3, layout.n))
    rows, cols = np.nonzero(a_dense)
    system = KktSystem(
        SparseMat.from_triplets(3, layout.n, rows, cols, a_dense[rows, cols]),
        gen.normal(size=3), gen.normal(size=layout.n), layout)
    assert system.sparsified == [False, False, True, True]
    print(f"\nACCEPTANCE 3 PASS: dense and arrow scaling blocks agree to "
          f"{worst:.2e}; sparsification iff dim >= 4")


def test_criterion_4_reference_scenario_cold(cold_landing, scenario):
    _, _, weights = scenario
    out = cold_landing
    assert out.success
    sim = out.simulation
    assert sim.r_err <= 2.0
    assert sim.v_err <= 0.2
    assert sim.fuel_remaining == pytest.approx(3123.9, rel=0.05)
    assert out.sc_steps <= 6
    print(f"\nACCEPTANCE 4 PASS: cold landing in {out.sc_steps} steps, "
          f"errors ({sim.r_err:.3f} m, {sim.v_err:.3f} m/s), "
          f"fuel {sim.fuel_remaining:.1f} kg")


def test_criterion_5_warm_start_effect(cold_landing, scenario):
    params, bc, weights = scenario
    warm = sc_solve(bc, params, weights, mode="warm", warm_iteration_cap=1,
                    max_sc_steps=120)
    assert warm.success
    assert warm.simulation.r_err <= 2.0
    assert warm.simulation.v_err <= 0.2
    assert warm.sc_steps <= 120
    iters = [s.ipm_iterations for s in warm.steps]
    assert all(i == 1 for i in iters[1:])
    assert warm.total_factorizations < cold_landing.total_factorizations
    print(f"\nACCEPTANCE 5 PASS: warm:1 lands in {warm.sc_steps} steps with 1 "
          f"iteration each; factorizations {warm.total_factorizations} < "
          f"{cold_landing.total_factorizations} (cold)")


def test_criterion_6_sparsity_contrast(scenario):
    from dataclasses import replace

    params, bc, weights = scenario
    template = SubproblemTemplate(params, weights)
    ref = initial_reference(bc, params, weights)
    problem = template.build(ref, bc)
    system = KktSystem(problem.A, problem.b, problem.c, problem.layout)
    unit = cold_start(problem.layout)
    scal = cones.compute_nt_scaling(unit.x, unit.s, problem.layout)
    baseline = build_normal_equations_baseline(problem.A, problem.layout, scal)
    nnz_b = system.B.full_nnz()
    assert nnz_b < 0.4 * baseline.nnz
    assert system.dim > baseline.n_rows

    table = {30: (870, 281, 155), 50: (1430, 461, 255), 100: (2830, 911, 505),
             200: (5630, 1811, 1005), 300: (8430, 2711, 1505),
             400: (11230, 3611, 2005)}
    for kf, (n_ref, l_ref, m_ref) in table.items():
        tpl = SubproblemTemplate(
            params, replace(weights, k_f=kf, k_fine=max(weights.k_fine, 10 * kf)))
        assert abs(tpl.n - n_ref) <= 0.10 * n_ref
        assert abs(tpl.layout.l - l_ref) <= 0.10 * l_ref
        assert abs(tpl.layout.m - m_ref) <= 0.10 * m_ref
    print(f"\nACCEPTANCE 6 PASS: nnz {nnz_b} vs baseline {baseline.nnz} "
          f"(ratio {nnz_b / baseline.nnz:.3f} < 0.4), dim {system.dim} > "
          f"{baseline.n_rows}; sizes within 10% at all six grids")


def test_criterion_7_monte_carlo(scenario, tmp_path):
    params, bc, weights = scenario
    config = tmp_path / "scenario.cfg"
    config.write_text(format_config(params, bc, weights, n_iter=60))

    stats = {}
    for mode, floor in (("cold", 0.70), ("warm:1", 0.65)):
        out = tmp_path / f"mc_{mode.replace(':', '')}.csv"
        code = cli_main(["montecarlo", str(config), "--runs", "100", "--seed", "2024",
                         "--mode", mode, "--out", str(out)])
        assert code == 0
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        rate = sum(int(r["success"]) for r in rows) / len(rows)
        fuels = [float(r["fuel_remaining"]) for r in rows if int(r["success"])]
        stats[mode] = (rate, float(np.mean(fuels)))
        assert rate >= floor, f"{mode} success rate {rate}"
        assert np.mean(fuels) == pytest.approx(2950.0, rel=0.10)
    print(f"\nACCEPTANCE 7 PASS: cold {stats['cold'][0]:.0%} success / "
          f"{stats['cold'][1]:.0f} kg, warm:1 {stats['warm:1'][0]:.0%} / "
          f"{stats['warm:1'][1]:.0f} kg")


def test_criterion_8_property_suites(scenario, rng):
    # cone algebra round trips at 1e-12
    layout = ConeLayout(l=3, soc_dims=(4, 6, 3))
    x = random_interior(rng, layout)
    s = random_interior(rng, layout)
    v = rng.normal(size=layout.n)
    rt = cones.arrowhead_apply(x, cones.arrowhead_solve(x, v, layout), layout)
    assert np.max(np.abs(rt - v)) <= 1e-12 * (1 + np.max(np.abs(v)))
    scal = cones.compute_nt_scaling(x, s, layout)
    rt2 = cones.apply_scaling(scal, cones.apply_scaling(scal, v, "D"), "D_inverse")
    assert np.max(np.abs(rt2 - v)) <= 1e-12 * (1 + np.max(np.abs(v)))

    # NT identity at 1e-10
    xbar = cones.apply_scaling(scal, x, "D_inverse")
    sbar = cones.apply_scaling(scal, s, "D")
    assert np.max(np.abs(xbar - sbar)) <= 1e-10 * (1 + np.max(np.abs(xbar)))

    # interior preservation along a full solve
    problem, _ = random_feasible_socp(rng)
    out = solve(problem, settings=SolverSettings())
    assert out.status == SolverStatus.OPTIMAL
    assert cones.membership(out.x * out.tau, problem.layout)

    # LDL reconstruction bound
    gen = np.random.default_rng(5)
    n = 25
    mask = np.triu(gen.random((n, n)) < 0.3, 1)
    dense = np.where(mask, gen.normal(size=(n, n)), 0.0)
    dense = dense + dense.T
    np.fill_diagonal(dense, np.where(gen.random(n) < 0.5, 1.0, -1.0)
                     * (np.abs(dense).sum(axis=1) + 1.0))
    rows, cols = np.nonzero(np.triu(dense != 0))
    mat = SparseMat.from_triplets(n, n, rows, cols, dense[rows, cols], upper=True)
    sym = symbolic_ldl(mat, amd_order(mat))
    fact = numeric_ldl(mat, sym, RegularizationSettings(delta=1e-8))
    low = np.eye(n)
    for j in range(n):
        low[sym.Li[sym.Lp[j]:sym.Lp[j + 1]], j] = fact.Lx[sym.Lp[j]:sym.Lp[j + 1]]
    err = np.linalg.norm(low @ np.diag(fact.D) @ low.T
                         - dense[np.ix_(sym.perm, sym.perm)], "fro")
    assert err <= np.abs(fact.reg).sum() + 1e-12 * np.linalg.norm(dense, "fro") + 1e-13
    rhs = gen.normal(size=n)
    xs = solve_refined(fact, mat, rhs)
    assert np.max(np.abs(dense @ xs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    # finite-difference Jacobian agreement at 1e-6
    params, bc, weights = scenario
    state = np.array([-900.0, 3800.0, 450.0, -45.0, -180.0, -90.0, 39_000.0])
    thrust = np.array([2e5, 7e5, -1e5])
    _, jx, _ = dynamics_jacobians(state[None, :], thrust[None, :], params)
    fd = np.zeros((7, 7))
    for j in range(7):
        h = 1e-3 * max(1.0, abs(state[j]))
        up, dn = state.copy(), state.copy()
        up[j] += h
        dn[j] -= h
        fd[:, j] = (nonlinear_derivative(up, thrust, params)
                    - nonlinear_derivative(dn, thrust, params)) / (2 * h)
    assert np.max(np.abs(jx[0] - fd)) <= 1e-6 * (1 + np.max(np.abs(fd)))

    # ballistic RK4 against closed-form kinematics at 1e-6 m
    from dataclasses import replace
    dragless = replace(params, C_D=0.0)
    tf = 20.0
    kf = weights.k_f
    traj = TrajectoryIterate(r=np.zeros((kf + 1, 3)), v=np.zeros((kf + 1, 3)),
                             a=np.zeros((kf + 1, 3)), m=np.full(kf + 1, 4e4),
                             T=np.zeros((kf + 1, 3)), gamma=np.zeros(kf + 1),
                             dt=tf / kf)
    bc2 = BoundaryConditions(r0=np.array([0.0, 5000.0, 0.0]),
                             v0=np.array([30.0, -10.0, 5.0]), m0=4e4, t_f0=tf)
    sim = verify_fine_grid(traj, bc2, dragless, weights)
    exact = bc2.r0 + bc2.v0 * tf + 0.5 * dragless.g * tf ** 2
    assert np.linalg.norm(sim.states[-1, :3] - exact) <= 1e-6
    print("\nACCEPTANCE 8 PASS: property suites hold at their stated tolerances")
