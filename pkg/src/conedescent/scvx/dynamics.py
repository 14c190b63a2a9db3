"""Point-mass descent dynamics with exponential-atmosphere drag.

State is x = (r, v, m) with y the vertical axis.  The same formulas serve the
SI frame and the internally scaled (Mg, kN) frame because mass and force are
scaled together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import BoundaryConditions, ScWeights, VehicleParams

__all__ = [
    "TrajectoryIterate",
    "DiscretizedDynamics",
    "SimulationResult",
    "drag",
    "mass_rate",
    "nonlinear_derivative",
    "dynamics_jacobians",
    "linearize_discretize",
    "initial_reference",
    "verify_fine_grid",
]


def drag(r_y: float, v: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Aerodynamic drag force, antiparallel to velocity.

    The density decays exponentially with altitude r_y from rho0 at the pad.
    """
    coef = 0.5 * params.C_D * params.S_ref * params.rho0 * np.exp(-params.c_rho * r_y)
    return -coef * np.linalg.norm(v) * v


def mass_rate(T: np.ndarray, params: VehicleParams) -> float:
    """Propellant consumption -|T| / (I_sp g0)."""
    return -float(np.linalg.norm(T)) / (params.I_sp * params.g0)


def nonlinear_derivative(state: np.ndarray, T: np.ndarray,
                         params: VehicleParams) -> np.ndarray:
    """d/dt of (r, v, m) under thrust T."""
    r, v, m = state[:3], state[3:6], state[6]
    if m <= 0.0:
        raise ValueError("nonpositive mass")
    acc = (T + drag(r[1], v, params)) / m + params.g
    return np.concatenate([v, acc, [mass_rate(T, params)]])


def dynamics_jacobians(states: np.ndarray, thrusts: np.ndarray,
                       params: VehicleParams):
    """Batched f, df/dx, df/du over node arrays (k, 7) and (k, 3).

    Velocity Jacobians use the closed forms of the drag and 1/m terms; at
    v = 0 or T = 0 the corresponding partials vanish (the drag magnitude and
    thrust norm are smooth there in every direction that matters: the limit of
    the product rule terms is zero).
    """
    k = states.shape[0]
    r = states[:, 0:3]
    v = states[:, 3:6]
    m = states[:, 6]
    coef = 0.5 * params.C_D * params.S_ref * params.rho0 * np.exp(-params.c_rho * r[:, 1])
    vnorm = np.linalg.norm(v, axis=1)
    d_force = -coef[:, None] * vnorm[:, None] * v

    f = np.empty((k, 7))
    f[:, 0:3] = v
    acc = (thrusts + d_force) / m[:, None] + params.g[None, :]
    f[:, 3:6] = acc
    tnorm = np.linalg.norm(thrusts, axis=1)
    f[:, 6] = -tnorm / (params.I_sp * params.g0)

    jx = np.zeros((k, 7, 7))
    jx[:, 0:3, 3:6] = np.eye(3)
    # d(acc)/d r_y: the density derivative flips the drag sign once more
    jx[:, 3:6, 1] = -params.c_rho * d_force / m[:, None]
    # d(drag)/d v = -coef (|v| I + v v' / |v|)
    safe_v = np.where(vnorm > 0.0, vnorm, 1.0)
    outer = v[:, :, None] * v[:, None, :] / safe_v[:, None, None]
    eye3 = np.eye(3)[None, :, :]
    jd = -coef[:, None, None] * (vnorm[:, None, None] * eye3 + outer)
    jd[vnorm == 0.0] = 0.0
    jx[:, 3:6, 3:6] = jd / m[:, None, None]
    jx[:, 3:6, 6] = -(thrusts + d_force) / (m ** 2)[:, None]

    ju = np.zeros((k, 7, 3))
    ju[:, 3:6, :] = eye3 / m[:, None, None]
    safe_t = np.where(tnorm > 0.0, tnorm, 1.0)
    ju[:, 6, :] = -thrusts / (safe_t[:, None] * params.I_sp * params.g0)
    ju[tnorm == 0.0, 6, :] = 0.0
    return f, jx, ju


@dataclass
class TrajectoryIterate:
    """Discretized trajectory over nodes k = 0..k_f (SI units)."""

    r: np.ndarray           # (k_f+1, 3)
    v: np.ndarray           # (k_f+1, 3)
    a: np.ndarray           # (k_f+1, 3), accelerations at the nodes
    m: np.ndarray           # (k_f+1,)
    T: np.ndarray           # (k_f+1, 3)
    gamma: np.ndarray       # (k_f+1,), thrust magnitude slack
    dt: float
    vc: np.ndarray | None = None          # virtual acceleration per node
    penalties: dict = field(default_factory=dict)

    @property
    def k_f(self) -> int:
        return self.r.shape[0] - 1

    @property
    def t_f(self) -> float:
        return self.k_f * self.dt


@dataclass
class DiscretizedDynamics:
    """Per-step affine maps x1 = A x0 + B u0 + Bp u1 + c_dt dt + E vc + d.

    The control is u = (T, Gamma): thrust vector plus the magnitude slack.
    Mass flows with Gamma (the lossless-relaxation form), so fuel accounting
    is exactly linear and any slack Gamma > |T| costs final mass, which is
    what pins the relaxation tight.
    """

    A: np.ndarray           # (k_f, 7, 7)
    B: np.ndarray           # (k_f, 7, 4)
    Bp: np.ndarray          # (k_f, 7, 4)
    c_dt: np.ndarray        # (k_f, 7)
    E: np.ndarray           # (k_f, 7, 3), virtual acceleration injection
    d: np.ndarray           # (k_f, 7)

    def propagate(self, x0: np.ndarray, u0: np.ndarray, u1: np.ndarray,
                  dt: float, k: int) -> np.ndarray:
        return (self.A[k] @ x0 + self.B[k] @ u0 + self.Bp[k] @ u1
                + self.c_dt[k] * dt + self.d[k])


def linearize_discretize(ref: TrajectoryIterate, params: VehicleParams,
                         substeps: int = 8) -> DiscretizedDynamics:
    """Exact-flow first-order-hold transcription about a reference trajectory.

    Each interval integrates the nonlinear flow together with its variational
    system (state transition matrix, the two FOH thrust convolution matrices,
    and the time-step sensitivity) by Runge-Kutta on ``substeps`` stages, all
    intervals in lockstep.  A reference whose nodes already lie on the flow
    therefore has zero transcription defect, so the fine-grid verification
    sees only genuine linearization error.  The virtual acceleration enters
    the velocity rows scaled by the reference step so its units stay m/s^2.
    """
    kf = ref.k_f
    dt = ref.dt
    if dt <= 0.0:
        raise ValueError("reference time step must be positive")
    if np.any(ref.m < params.m_dry * (1.0 - 1e-9)):
        raise ValueError("reference mass below dry mass")

    x0 = np.concatenate([ref.r[:-1], ref.v[:-1], ref.m[:-1, None]], axis=1)
    t0 = ref.T[:-1]
    t1 = ref.T[1:]
    g0_ = ref.gamma[:-1]
    g1_ = ref.gamma[1:]
    inv_ve = 1.0 / (params.I_sp * params.g0)
    m_floor = 0.5 * params.m_dry   # keeps 1/m finite on wild intermediate flows

    def rates(xc, phi, psi0, psi1, s_dt, tau):
        xc = xc.copy()
        xc[:, 6] = np.maximum(xc[:, 6], m_floor)
        thrust = (1.0 - tau) * t0 + tau * t1
        f, jx, ju3 = dynamics_jacobians(xc, thrust, params)
        # mass flows with the magnitude slack, not |T|
        f[:, 6] = -((1.0 - tau) * g0_ + tau * g1_) * inv_ve
        ju = np.zeros((kf, 7, 4))
        ju[:, :6, :3] = ju3[:, :6, :]
        ju[:, 6, 3] = -inv_ve
        return (
            dt * f,
            dt * (jx @ phi),
            dt * (jx @ psi0 + (1.0 - tau) * ju),
            dt * (jx @ psi1 + tau * ju),
            dt * np.einsum("kij,kj->ki", jx, s_dt) + f,
        )

    xc = x0.copy()
    phi = np.broadcast_to(np.eye(7), (kf, 7, 7)).copy()
    psi0 = np.zeros((kf, 7, 4))
    psi1 = np.zeros((kf, 7, 4))
    s_dt = np.zeros((kf, 7))
    h = 1.0 / substeps
    for i in range(substeps):
        tau = i * h
        state = (xc, phi, psi0, psi1, s_dt)
        k1 = rates(*state, tau)
        k2 = rates(*(a + 0.5 * h * b for a, b in zip(state, k1)), tau + 0.5 * h)
        k3 = rates(*(a + 0.5 * h * b for a, b in zip(state, k2)), tau + 0.5 * h)
        k4 = rates(*(a + h * b for a, b in zip(state, k3)), tau + h)
        xc, phi, psi0, psi1, s_dt = (
            a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(state, k1, k2, k3, k4)
        )

    u0 = np.column_stack([t0, g0_])
    u1 = np.column_stack([t1, g1_])
    d = (xc - np.einsum("kij,kj->ki", phi, x0)
         - np.einsum("kij,kj->ki", psi0, u0)
         - np.einsum("kij,kj->ki", psi1, u1)
         - s_dt * dt)
    evc = np.zeros((kf, 7, 3))
    evc[:, 3:6, :] = np.eye(3) * dt
    return DiscretizedDynamics(A=phi, B=psi0, Bp=psi1, c_dt=s_dt, E=evc, d=d)


def initial_reference(bc: BoundaryConditions, params: VehicleParams,
                      weights: ScWeights) -> TrajectoryIterate:
    """Straight-line seed: interpolated position/velocity, hover-rate mass,
    gravity-cancelling thrust clamped to the feasible magnitude range."""
    kf = weights.k_f
    tau = np.linspace(0.0, 1.0, kf + 1)[:, None]
    r = bc.r0[None, :] * (1.0 - tau)
    v = bc.v0[None, :] * (1.0 - tau)
    dt = bc.t_f0 / kf

    hover = bc.m0 * params.g0
    gamma0 = float(np.clip(hover, params.T_min, params.T_max))
    burn_rate = gamma0 / (params.I_sp * params.g0)
    m = np.maximum(bc.m0 - burn_rate * dt * np.arange(kf + 1), params.m_dry)

    T = np.zeros((kf + 1, 3))
    gamma = np.clip(m * params.g0, params.T_min, params.T_max)
    T[:, 1] = gamma
    a = np.empty((kf + 1, 3))
    for k in range(kf + 1):
        a[k] = (T[k] + drag(r[k, 1], v[k], params)) / m[k] + params.g
    return TrajectoryIterate(r=r, v=v, a=a, m=m, T=T, gamma=gamma, dt=dt)


@dataclass
class SimulationResult:
    r_err: float
    v_err: float
    fuel_remaining: float
    feasible: bool
    t: np.ndarray           # (k_fine+1,)
    states: np.ndarray      # (k_fine+1, 7)
    thrust: np.ndarray      # (k_fine+1, 3)


def verify_fine_grid(traj: TrajectoryIterate, bc: BoundaryConditions,
                     params: VehicleParams, weights: ScWeights,
                     k_fine: int | None = None) -> SimulationResult:
    """Integrate the nonlinear dynamics under the programmed thrust.

    Classic fourth-order Runge-Kutta on a uniform fine grid; thrust is
    interpolated linearly between the coarse nodes.  Hitting the dry mass
    mid-flight marks the result infeasible (thrust the tanks cannot deliver).
    """
    if traj.dt <= 0.0:
        raise ValueError("trajectory time step must be positive")
    kf = traj.k_f
    n_steps = int(k_fine if k_fine is not None else weights.k_fine)
    t_f = traj.t_f
    h = t_f / n_steps
    node_t = np.arange(kf + 1) * traj.dt

    def thrust_at(t: float) -> np.ndarray:
        if t <= 0.0:
            return traj.T[0]
        if t >= t_f:
            return traj.T[-1]
        k = min(int(t / traj.dt), kf - 1)
        w = (t - node_t[k]) / traj.dt
        return (1.0 - w) * traj.T[k] + w * traj.T[k + 1]

    state = np.concatenate([bc.r0, bc.v0, [bc.m0]])
    states = np.empty((n_steps + 1, 7))
    thrust = np.empty((n_steps + 1, 3))
    states[0] = state
    thrust[0] = thrust_at(0.0)
    feasible = True

    for i in range(n_steps):
        t = i * h
        mid = t + 0.5 * h
        k1 = nonlinear_derivative(state, thrust_at(t), params)
        k2 = nonlinear_derivative(state + 0.5 * h * k1, thrust_at(mid), params)
        k3 = nonlinear_derivative(state + 0.5 * h * k2, thrust_at(mid), params)
        k4 = nonlinear_derivative(state + h * k3, thrust_at(t + h), params)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if state[6] < params.m_dry:
            feasible = False
            state[6] = params.m_dry
        states[i + 1] = state
        thrust[i + 1] = thrust_at((i + 1) * h)

    return SimulationResult(
        r_err=float(np.linalg.norm(state[:3])),
        v_err=float(np.linalg.norm(state[3:6])),
        fuel_remaining=float(state[6] - params.m_dry),
        feasible=feasible,
        t=np.arange(n_steps + 1) * h,
        states=states,
        thrust=thrust,
    )
