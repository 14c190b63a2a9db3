import numpy as np
import pytest
from dataclasses import replace

from conedescent.scvx.dynamics import (
    TrajectoryIterate,
    drag,
    dynamics_jacobians,
    initial_reference,
    linearize_discretize,
    mass_rate,
    nonlinear_derivative,
    verify_fine_grid,
)
from conedescent.scvx.params import BoundaryConditions, sample_scenario


@pytest.fixture(scope="module")
def scenario():
    return sample_scenario()


class TestDrag:
    def test_zero_velocity(self, scenario):
        params, _, _ = scenario
        np.testing.assert_array_equal(drag(0.0, np.zeros(3), params), np.zeros(3))

    def test_sea_level_retro(self, scenario):
        params, _, _ = scenario
        force = drag(0.0, np.array([0.0, -100.0, 0.0]), params)
        np.testing.assert_allclose(force, [0.0, 30625.0, 0.0])

    def test_opposes_motion(self, scenario, rng):
        params, _, _ = scenario
        for _ in range(20):
            v = rng.normal(size=3) * 100
            assert drag(float(rng.random() * 5000), v, params) @ v <= 0.0

    def test_decays_with_altitude(self, scenario):
        params, _, _ = scenario
        v = np.array([10.0, -50.0, 0.0])
        lo = np.linalg.norm(drag(0.0, v, params))
        hi = np.linalg.norm(drag(4000.0, v, params))
        assert hi < lo


class TestMassRate:
    def test_zero_thrust(self, scenario):
        params, _, _ = scenario
        assert mass_rate(np.zeros(3), params) == 0.0

    def test_reference_value(self, scenario):
        params, _, _ = scenario
        rate = mass_rate(np.array([0.0, 1e6, 0.0]), params)
        assert rate == pytest.approx(-1e6 / (300.0 * 9.8))

    def test_linear_in_magnitude(self, scenario, rng):
        params, _, _ = scenario
        thrust = rng.normal(size=3) * 1e5
        assert mass_rate(2 * thrust, params) == pytest.approx(2 * mass_rate(thrust, params))


class TestDerivative:
    def test_hover_balance(self, scenario):
        params, _, _ = scenario
        m = 40_000.0
        state = np.array([0.0, 1000.0, 0.0, 0.0, 0.0, 0.0, m])
        rate = nonlinear_derivative(state, -m * params.g, params)
        np.testing.assert_allclose(rate[:6], 0.0, atol=1e-12)

    def test_free_fall(self, scenario):
        params, _, _ = scenario
        state = np.array([0.0, 1000.0, 0.0, 0.0, 0.0, 0.0, 40_000.0])
        rate = nonlinear_derivative(state, np.zeros(3), params)
        np.testing.assert_allclose(rate[3:6], params.g)

    def test_nonpositive_mass_rejected(self, scenario):
        params, _, _ = scenario
        with pytest.raises(ValueError):
            nonlinear_derivative(np.array([0, 1, 0, 0, 0, 0, 0.0]), np.zeros(3), params)

    def test_jacobians_match_central_differences(self, scenario):
        params, _, _ = scenario
        state = np.array([-800.0, 3500.0, 400.0, -40.0, -150.0, -80.0, 38_000.0])
        thrust = np.array([1e5, 6e5, -5e4])
        _, jx, ju = dynamics_jacobians(state[None, :], thrust[None, :], params)
        jx_fd = np.zeros((7, 7))
        for j in range(7):
            h = 1e-3 * max(1.0, abs(state[j]))
            up, dn = state.copy(), state.copy()
            up[j] += h
            dn[j] -= h
            jx_fd[:, j] = (nonlinear_derivative(up, thrust, params)
                           - nonlinear_derivative(dn, thrust, params)) / (2 * h)
        ju_fd = np.zeros((7, 3))
        for j in range(3):
            h = 1e-3 * max(1.0, abs(thrust[j]))
            up, dn = thrust.copy(), thrust.copy()
            up[j] += h
            dn[j] -= h
            ju_fd[:, j] = (nonlinear_derivative(state, up, params)
                           - nonlinear_derivative(state, dn, params)) / (2 * h)
        assert np.max(np.abs(jx[0] - jx_fd)) <= 1e-6 * (1 + np.max(np.abs(jx_fd)))
        assert np.max(np.abs(ju[0] - ju_fd)) <= 1e-6 * (1 + np.max(np.abs(ju_fd)))


def ballistic_trajectory(kf, tf, m0):
    return TrajectoryIterate(
        r=np.zeros((kf + 1, 3)), v=np.zeros((kf + 1, 3)), a=np.zeros((kf + 1, 3)),
        m=np.full(kf + 1, m0), T=np.zeros((kf + 1, 3)),
        gamma=np.zeros(kf + 1), dt=tf / kf,
    )


class TestFineGridVerification:
    def test_ballistic_arc_matches_kinematics(self, scenario):
        params, _, weights = scenario
        dragless = replace(params, C_D=0.0)
        tf = 20.0
        bc = BoundaryConditions(r0=np.array([0.0, 5000.0, 0.0]),
                                v0=np.array([30.0, -10.0, 5.0]),
                                m0=40_000.0, t_f0=tf)
        sim = verify_fine_grid(ballistic_trajectory(weights.k_f, tf, bc.m0),
                               bc, dragless, weights)
        exact = bc.r0 + bc.v0 * tf + 0.5 * dragless.g * tf ** 2
        assert np.linalg.norm(sim.states[-1, :3] - exact) <= 1e-6

    def test_grid_doubling_converged(self, scenario):
        params, bc, weights = scenario
        traj = initial_reference(bc, params, weights)
        coarse = verify_fine_grid(traj, bc, params, weights, k_fine=300)
        fine = verify_fine_grid(traj, bc, params, weights, k_fine=600)
        scale = np.max(np.abs(fine.states[-1]))
        assert np.max(np.abs(coarse.states[-1] - fine.states[-1])) <= 1e-8 * scale

    def test_row_count_and_time_axis(self, scenario):
        params, bc, weights = scenario
        traj = initial_reference(bc, params, weights)
        sim = verify_fine_grid(traj, bc, params, weights)
        assert sim.t.size == weights.k_fine + 1
        assert sim.states.shape == (weights.k_fine + 1, 7)
        assert sim.t[-1] == pytest.approx(traj.t_f)

    def test_dry_mass_breach_flagged(self, scenario):
        params, bc, weights = scenario
        kf = weights.k_f
        traj = initial_reference(bc, params, weights)
        hungry = TrajectoryIterate(
            r=traj.r, v=traj.v, a=traj.a,
            m=traj.m, T=traj.T, gamma=traj.gamma, dt=traj.dt * 30.0)
        bc_low_fuel = BoundaryConditions(r0=bc.r0, v0=bc.v0,
                                         m0=params.m_dry + 200.0, t_f0=bc.t_f0)
        sim = verify_fine_grid(hungry, bc_low_fuel, params, weights)
        assert not sim.feasible
        assert sim.fuel_remaining == pytest.approx(0.0)

    def test_mass_never_increases(self, scenario):
        params, bc, weights = scenario
        sim = verify_fine_grid(initial_reference(bc, params, weights), bc, params, weights)
        assert np.all(np.diff(sim.states[:, 6]) <= 1e-12)


class TestLinearization:
    def test_transition_tends_to_identity(self, scenario):
        params, bc, weights = scenario
        ref = initial_reference(bc, params, weights)
        tiny = TrajectoryIterate(r=ref.r, v=ref.v, a=ref.a, m=ref.m, T=ref.T,
                                 gamma=ref.gamma, dt=1e-9)
        dyn = linearize_discretize(tiny, params)
        assert np.max(np.abs(dyn.A - np.eye(7))) <= 1e-6

    def test_flow_consistent_reference_has_zero_defect(self, scenario):
        """Propagating each node through the true dynamics and feeding those
        nodes back as the reference must zero the transcription defect."""
        params, bc, weights = scenario
        ref = initial_reference(bc, params, weights)
        kf = ref.k_f
        state = np.concatenate([bc.r0, bc.v0, [bc.m0]])
        nodes = [state]
        h = ref.dt / 32
        for k in range(kf):
            st = nodes[-1].copy()
            for i in range(32):
                tau0 = i / 32.0
                tau_m = (i + 0.5) / 32.0
                tau1 = (i + 1) / 32.0

                def thrust(tau):
                    return (1 - tau) * ref.T[k] + tau * ref.T[k + 1]

                k1 = nonlinear_derivative(st, thrust(tau0), params)
                k2 = nonlinear_derivative(st + 0.5 * h * k1, thrust(tau_m), params)
                k3 = nonlinear_derivative(st + 0.5 * h * k2, thrust(tau_m), params)
                k4 = nonlinear_derivative(st + h * k3, thrust(tau1), params)
                st = st + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            nodes.append(st)
        nodes = np.array(nodes)
        # gamma drives the planned mass flow, so make it consistent with |T|
        flown = TrajectoryIterate(
            r=nodes[:, :3], v=nodes[:, 3:6], a=ref.a, m=nodes[:, 6],
            T=ref.T, gamma=np.linalg.norm(ref.T, axis=1), dt=ref.dt)
        dyn = linearize_discretize(flown, params)
        states = nodes
        controls = np.column_stack([ref.T, flown.gamma])
        worst = 0.0
        for k in range(kf):
            pred = dyn.propagate(states[k], controls[k], controls[k + 1], ref.dt, k)
            worst = max(worst, np.max(np.abs(pred - states[k + 1])
                                      / (1.0 + np.abs(states[k + 1]))))
        assert worst <= 1e-7

    def test_defect_matches_flow_error_of_reference(self, scenario):
        # d captures exactly how far the reference nodes sit from the flow
        params, bc, weights = scenario
        ref = initial_reference(bc, params, weights)
        dyn = linearize_discretize(ref, params)
        states = np.concatenate([ref.r, ref.v, ref.m[:, None]], axis=1)
        controls = np.column_stack([ref.T, ref.gamma])
        pred0 = dyn.propagate(states[0], controls[0], controls[1], ref.dt, 0)
        sim = verify_fine_grid(ref, bc, params, weights, k_fine=64 * ref.k_f)
        flowed = sim.states[64]
        assert np.max(np.abs(pred0 - flowed) / (1 + np.abs(flowed))) <= 1e-4

    def test_degenerate_reference_rejected(self, scenario):
        params, bc, weights = scenario
        ref = initial_reference(bc, params, weights)
        starved = TrajectoryIterate(r=ref.r, v=ref.v, a=ref.a,
                                    m=np.full(ref.k_f + 1, params.m_dry - 1.0),
                                    T=ref.T, gamma=ref.gamma, dt=ref.dt)
        with pytest.raises(ValueError):
            linearize_discretize(starved, params)


class TestInitialReference:
    def test_boundary_anchoring(self, scenario):
        params, bc, weights = scenario
        ref = initial_reference(bc, params, weights)
        np.testing.assert_allclose(ref.r[0], bc.r0)
        np.testing.assert_allclose(ref.v[0], bc.v0)
        np.testing.assert_allclose(ref.r[-1], 0.0)
        assert ref.m[0] == bc.m0
        assert ref.dt == pytest.approx(bc.t_f0 / weights.k_f)
        assert np.all(ref.m >= params.m_dry)
        mags = np.linalg.norm(ref.T, axis=1)
        assert np.all(mags <= params.T_max + 1e-9)
        assert np.all(mags >= params.T_min - 1e-9)
