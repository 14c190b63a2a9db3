"""Convex landing subproblem canonicalized to standard conic form.

Every decision quantity lives in exactly one cone slot.  Per grid point the
layout carries five second-order cones

    speed  (t, vx, vy, vz)      |v| <= t,  t + slack = v_max
    glide  (g, rx, rz)          |(rx, rz)| <= g = tan(theta_gs) ry
    thrust (Gamma, Tx, Ty, Tz)  |T| <= Gamma, T_min <= Gamma <= T_max
    trust  (eta_T, T - T_ref)   per-node thrust trust region
    vc     (eta_a, kappa)       per-node virtual acceleration

plus seven linear slots (altitude, mass, and five inequality slacks) and two
rate slacks per step; three global linear slots implement the time-step
variable and its |dt - dt_ref| trust region.  The sparsity pattern is fixed
across successive linearization steps, so one template serves a whole solve:
rebuilding a subproblem only rewrites the dynamics values and the right-hand
side.

Internally the problem is scaled twice.  Physics runs in (m, s, Mg, kN), a
consistent unit system that leaves every dynamics formula unchanged.  On top
of that, fixed per-family slot scales (uniform within each cone, so the cone
geometry is untouched) and fixed row scales bring the assembled entries near
unity; without this the embedding's tau settles around 1e-4 and the relative
duality gap floors just above tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cones import ConeLayout
from ..ipm import SocpProblem
from ..sparse import SparseMat
from .dynamics import TrajectoryIterate, drag, linearize_discretize
from .params import BoundaryConditions, ScWeights, VehicleParams

__all__ = ["VariableMap", "SubproblemTemplate"]

_MASS_UNIT = 1e3


@dataclass
class VariableMap:
    """Slot indices of every physical quantity in the standard-form vector."""

    dt: int
    dt_up: int
    dt_dn: int
    ry: np.ndarray          # (k_f+1,)
    mass: np.ndarray
    speed_t: np.ndarray
    v: np.ndarray           # (k_f+1, 3)
    glide_t: np.ndarray
    rx: np.ndarray
    rz: np.ndarray
    gamma: np.ndarray
    T: np.ndarray           # (k_f+1, 3)
    eta_T: np.ndarray
    dT: np.ndarray
    eta_a: np.ndarray
    vc: np.ndarray          # (k_f+1, 3)

    def state_slots(self) -> np.ndarray:
        """(k_f+1, 7) slot matrix ordered (rx, ry, rz, vx, vy, vz, m)."""
        return np.column_stack([
            self.rx, self.ry, self.rz,
            self.v[:, 0], self.v[:, 1], self.v[:, 2],
            self.mass,
        ])


class SubproblemTemplate:
    """Fixed-structure subproblem factory for one (params, weights) pair."""

    def __init__(self, params: VehicleParams, weights: ScWeights):
        self.params = params
        self.params_scaled = params.scaled(_MASS_UNIT)
        self.weights = weights
        kf = weights.k_f
        self.k_f = kf

        n_lin = 3 + 7 * (kf + 1) + 2 * kf
        dims = []
        nodes = np.arange(kf + 1)
        base = n_lin + 19 * nodes
        self.vmap = VariableMap(
            dt=0, dt_up=1, dt_dn=2,
            ry=3 + 7 * nodes,
            mass=4 + 7 * nodes,
            speed_t=base + 0,
            v=np.column_stack([base + 1, base + 2, base + 3]),
            glide_t=base + 4,
            rx=base + 5,
            rz=base + 6,
            gamma=base + 7,
            T=np.column_stack([base + 8, base + 9, base + 10]),
            eta_T=base + 11,
            dT=np.column_stack([base + 12, base + 13, base + 14]),
            eta_a=base + 15,
            vc=np.column_stack([base + 16, base + 17, base + 18]),
        )
        self._slack = {
            "mass": 5 + 7 * nodes,
            "gmin": 6 + 7 * nodes,
            "gmax": 7 + 7 * nodes,
            "tilt": 8 + 7 * nodes,
            "vcap": 9 + 7 * nodes,
            "rup": 3 + 7 * (kf + 1) + 2 * np.arange(kf),
            "rdn": 4 + 7 * (kf + 1) + 2 * np.arange(kf),
        }
        for _ in nodes:
            dims.extend((4, 3, 4, 4, 4))
        self.layout = ConeLayout(l=n_lin, soc_dims=tuple(dims))
        self.n = self.layout.n

        self._build_slot_scales()
        self._build_rows_and_pattern()
        self._build_cost()

    def _build_slot_scales(self):
        """Fixed slot units (kN/Mg frame -> near-unity entries), cone-uniform."""
        vm = self.vmap
        s = np.ones(self.n)
        s[[vm.dt, vm.dt_up, vm.dt_dn]] = 1.0
        s[vm.ry] = 1e3
        s[vm.mass] = 1e1
        s[self._slack["mass"]] = 1e1
        s[self._slack["gmin"]] = 1e3
        s[self._slack["gmax"]] = 1e3
        s[self._slack["tilt"]] = 1e3
        s[self._slack["vcap"]] = 1e2
        s[self._slack["rup"]] = 1e2
        s[self._slack["rdn"]] = 1e2
        for cols in (vm.speed_t, vm.v[:, 0], vm.v[:, 1], vm.v[:, 2]):
            s[cols] = 1e2
        for cols in (vm.glide_t, vm.rx, vm.rz):
            s[cols] = 1e3
        for cols in (vm.gamma, vm.T[:, 0], vm.T[:, 1], vm.T[:, 2]):
            s[cols] = 1e3
        for cols in (vm.eta_T, vm.dT[:, 0], vm.dT[:, 1], vm.dT[:, 2]):
            s[cols] = 1e2
        # virtual-acceleration cone stays in m/s^2
        self.col_scale = s

    # ------------- construction helpers -------------

    def _build_rows_and_pattern(self):
        kf = self.k_f
        vm = self.vmap
        pp = self.params_scaled
        state = vm.state_slots()

        self.rows_dyn = np.arange(7 * kf).reshape(kf, 7)
        node_rows = 7 * kf + 9 * np.arange(kf + 1)
        self.rows_vcap = node_rows
        self.rows_glide = node_rows + 1
        self.rows_dT = node_rows[:, None] + np.array([2, 3, 4])
        self.rows_mslack = node_rows + 5
        self.rows_gmin = node_rows + 6
        self.rows_gmax = node_rows + 7
        self.rows_tilt = node_rows + 8
        rate_base = 7 * kf + 9 * (kf + 1)
        self.rows_rup = rate_base + 2 * np.arange(kf)
        self.rows_rdn = rate_base + 2 * np.arange(kf) + 1
        self.row_dt_tie = rate_base + 2 * kf
        bc_base = self.row_dt_tie + 1
        self.rows_bc = np.arange(bc_base, bc_base + 15)
        self.p = bc_base + 15

        rs = np.ones(self.p)
        rs[self.rows_dyn[:, 0:3]] = 1e3
        rs[self.rows_dyn[:, 3:6]] = 1e2
        rs[self.rows_dyn[:, 6]] = 1e1
        rs[self.rows_vcap] = 1e2
        rs[self.rows_glide] = 1e3
        rs[self.rows_dT] = 1e2
        rs[self.rows_mslack] = 1e1
        rs[self.rows_gmin] = 1e3
        rs[self.rows_gmax] = 1e3
        rs[self.rows_tilt] = 1e3
        rs[self.rows_rup] = 1e2
        rs[self.rows_rdn] = 1e2
        rs[self.rows_bc] = np.array([1e3] * 3 + [1e2] * 3 + [1e1] + [1e3] * 3 + [1e2] * 3 + [1e3] * 2)
        self.row_scale = rs

        # varying dynamics triplets first so their value region is contiguous
        rows, cols = [], []
        rb = self.rows_dyn

        def add(r, c):
            rows.append(np.asarray(r, dtype=np.int64).ravel())
            cols.append(np.asarray(c, dtype=np.int64).ravel())

        controls = np.column_stack([vm.T, vm.gamma])                      # (k_f+1, 4)
        add(np.broadcast_to(rb[:, :6, None], (kf, 6, 7)),
            np.broadcast_to(state[:-1][:, None, :], (kf, 6, 7)))          # -A[0:6]
        add(np.broadcast_to(rb[:, :6, None], (kf, 6, 4)),
            np.broadcast_to(controls[:-1][:, None, :], (kf, 6, 4)))       # -B[0:6]
        add(rb[:, 6], vm.gamma[:-1])                                      # -B[6, Gamma]
        add(np.broadcast_to(rb[:, :6, None], (kf, 6, 4)),
            np.broadcast_to(controls[1:][:, None, :], (kf, 6, 4)))        # -Bp[0:6]
        add(rb[:, 6], vm.gamma[1:])                                       # -Bp[6, Gamma]
        add(rb, np.full((kf, 7), vm.dt))                                  # -c_dt
        add(np.broadcast_to(rb[:, :6, None], (kf, 6, 3)),
            np.broadcast_to(vm.vc[:-1][:, None, :], (kf, 6, 3)))          # -E[0:6]
        self.n_dyn_values = sum(a.size for a in rows)

        # constant coefficients
        add(rb, state[1:])                                                # +I on x_{k+1}
        add(rb[:, 6], vm.mass[:-1])                                       # mass row of -A
        add(self.rows_vcap, vm.speed_t); add(self.rows_vcap, self._slack["vcap"])
        add(self.rows_glide, vm.glide_t); add(self.rows_glide, vm.ry)
        add(self.rows_dT, vm.dT); add(self.rows_dT, vm.T)
        add(self.rows_mslack, vm.mass); add(self.rows_mslack, self._slack["mass"])
        add(self.rows_gmin, vm.gamma); add(self.rows_gmin, self._slack["gmin"])
        add(self.rows_gmax, vm.gamma); add(self.rows_gmax, self._slack["gmax"])
        add(self.rows_tilt, vm.T[:, 1]); add(self.rows_tilt, vm.gamma)
        add(self.rows_tilt, self._slack["tilt"])
        add(self.rows_rup, vm.gamma[1:]); add(self.rows_rup, vm.gamma[:-1])
        add(self.rows_rup, self._slack["rup"])
        add(self.rows_rdn, vm.gamma[1:]); add(self.rows_rdn, vm.gamma[:-1])
        add(self.rows_rdn, self._slack["rdn"])
        add([self.row_dt_tie] * 3, [vm.dt, vm.dt_up, vm.dt_dn])
        # initial state fully pinned; final position/velocity zero; final thrust vertical
        bc_cols = np.concatenate([state[0], state[kf, :6], [vm.T[kf, 0], vm.T[kf, 2]]])
        add(self.rows_bc, bc_cols)

        const_vals = np.concatenate([
            np.ones(7 * kf),                      # x_{k+1} identity
            -np.ones(kf),                         # mass row of -A (A[6,6] = 1 always)
            np.ones(kf + 1), np.ones(kf + 1),     # vcap
            np.ones(kf + 1), np.full(kf + 1, -math.tan(self.params.theta_gs)),
            np.ones(3 * (kf + 1)), -np.ones(3 * (kf + 1)),        # dT, T
            np.ones(kf + 1), -np.ones(kf + 1),    # mass slack
            np.ones(kf + 1), -np.ones(kf + 1),    # gamma lower
            np.ones(kf + 1), np.ones(kf + 1),     # gamma upper
            np.ones(kf + 1), np.full(kf + 1, -math.cos(self.params.theta_T_max)),
            -np.ones(kf + 1),                     # tilt slack
            np.ones(kf), -np.ones(kf), -np.ones(kf),   # rate up
            np.ones(kf), -np.ones(kf), np.ones(kf),    # rate down
            np.array([1.0, -1.0, 1.0]),           # dt tie
            np.ones(15),                          # boundary rows
        ])

        all_rows = np.concatenate(rows)
        all_cols = np.concatenate(cols)
        equil = self.col_scale[all_cols] / self.row_scale[all_rows]
        vals = np.concatenate([np.zeros(self.n_dyn_values), const_vals]) * equil
        if vals.size != all_rows.size:
            raise AssertionError("triplet bookkeeping out of sync")
        self._mat, pos = SparseMat.from_triplets_with_map(
            self.p, self.n, all_rows, all_cols, vals, upper=False)
        if self._mat.nnz != all_rows.size:
            raise AssertionError("unexpected duplicate coefficients in the template")
        self._dyn_pos = pos[: self.n_dyn_values]
        self._dyn_equil = equil[: self.n_dyn_values]

        # right-hand side template (scaled units); varying entries set per build
        b = np.zeros(self.p)
        b[self.rows_vcap] = self.params.v_max
        b[self.rows_mslack] = pp.m_dry
        b[self.rows_gmin] = pp.T_min
        b[self.rows_gmax] = pp.T_max
        self._b_base = b

    def _build_cost(self):
        w = self.weights
        kf = self.k_f
        c = np.zeros(self.n)
        c[self.vmap.mass[kf]] = -w.w_m_f * _MASS_UNIT
        c[self.vmap.dt_up] = w.w_eta_dt
        c[self.vmap.dt_dn] = w.w_eta_dt
        c[self.vmap.eta_T] = w.w_eta_T * _MASS_UNIT / kf
        c[self.vmap.eta_a] = w.w_kappa_aR / kf
        self.c = c * self.col_scale

    # ------------- per-iteration assembly -------------

    def scaled_reference(self, ref: TrajectoryIterate) -> TrajectoryIterate:
        # inexact (iteration-capped) iterates may dip below the dry mass by
        # their residual; the linearization point is clamped back above it
        m_floor = self.params_scaled.m_dry * (1.0 + 1e-12)
        return TrajectoryIterate(
            r=ref.r, v=ref.v, a=ref.a,
            m=np.maximum(ref.m / _MASS_UNIT, m_floor),
            T=ref.T / _MASS_UNIT,
            gamma=ref.gamma / _MASS_UNIT, dt=ref.dt, vc=ref.vc,
        )

    def build(self, ref: TrajectoryIterate, bc: BoundaryConditions) -> SocpProblem:
        """Linearize about ``ref`` and emit the standard-form subproblem.

        The returned problem shares this template's matrix storage; values are
        overwritten by the next call.
        """
        if ref.k_f != self.k_f:
            raise ValueError("reference node count differs from the template")
        kf = self.k_f
        pp = self.params_scaled
        ref_s = self.scaled_reference(ref)
        dyn = linearize_discretize(ref_s, pp)

        vals = np.concatenate([
            (-dyn.A[:, :6, :]).ravel(),
            (-dyn.B[:, :6, :]).ravel(),
            (-dyn.B[:, 6, 3]).ravel(),
            (-dyn.Bp[:, :6, :]).ravel(),
            (-dyn.Bp[:, 6, 3]).ravel(),
            (-dyn.c_dt).ravel(),
            (-dyn.E[:, :6, :]).ravel(),
        ])
        self._mat.data[self._dyn_pos] = vals * self._dyn_equil

        b = self._b_base.copy()
        b[self.rows_dyn.ravel()] = dyn.d.ravel()
        b[self.rows_dT.ravel()] = (-ref_s.T).ravel()
        b[self.rows_rup] = pp.Tdot_min * ref.dt
        b[self.rows_rdn] = pp.Tdot_max * ref.dt
        b[self.row_dt_tie] = ref.dt
        b[self.rows_bc] = np.concatenate([
            bc.r0, bc.v0, [bc.m0 / _MASS_UNIT], np.zeros(8),
        ])
        b /= self.row_scale
        return SocpProblem(A=self._mat, b=b, c=self.c, layout=self.layout)

    def extract_trajectory(self, x: np.ndarray) -> TrajectoryIterate:
        """Map a standard-form solution vector back to SI trajectory arrays."""
        vm = self.vmap
        kf = self.k_f
        x = x * self.col_scale
        r = np.column_stack([x[vm.rx], x[vm.ry], x[vm.rz]])
        v = x[vm.v]
        m = x[vm.mass] * _MASS_UNIT
        thrust = x[vm.T] * _MASS_UNIT
        gamma = x[vm.gamma] * _MASS_UNIT
        vc = x[vm.vc]
        a = np.empty_like(v)
        for k in range(kf + 1):
            a[k] = (thrust[k] + drag(r[k, 1], v[k], self.params)) / m[k] + self.params.g
        dt = float(x[vm.dt])
        penalties = {
            "eta_dt": float(x[vm.dt_up] + x[vm.dt_dn]),
            "eta_T_mean": float(np.mean(x[vm.eta_T])) * _MASS_UNIT,
            "eta_a_mean": float(np.mean(x[vm.eta_a])),
            "vc_max": float(np.max(np.linalg.norm(vc, axis=1))),
        }
        return TrajectoryIterate(r=r, v=v, a=a, m=m, T=thrust, gamma=gamma,
                                 dt=dt, vc=vc, penalties=penalties)

    @property
    def sizes(self) -> dict:
        """Canonical problem dimensions (variables, linear cones, SOCs, rows)."""
        return {
            "variables": self.n,
            "linear_cones": self.layout.l,
            "soc_cones": self.layout.m,
            "rows": self.p,
        }
