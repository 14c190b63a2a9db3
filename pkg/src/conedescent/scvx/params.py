"""Scenario parameters and the flat key=value config format.

All stored quantities are SI (N, kg, m, s, rad).  Two config conventions are
converted at ingestion: angles arrive in degrees (keys carry a ``_deg``
suffix) and the thrust trust-region weight arrives per kilonewton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "VehicleParams",
    "BoundaryConditions",
    "ScWeights",
    "ConfigError",
    "parse_config",
    "format_config",
    "load_config",
    "sample_scenario",
]


class ConfigError(ValueError):
    """Missing, unknown, or unparsable scenario configuration keys."""


@dataclass
class VehicleParams:
    rho0: float            # air density at the landing site, kg/m^3
    c_rho: float           # exponential density decay constant, 1/m
    S_ref: float           # drag reference area, m^2
    C_D: float             # drag coefficient
    g: np.ndarray          # gravity vector, m/s^2 (y axis is up)
    m_dry: float           # dry mass, kg
    I_sp: float            # specific impulse, s
    v_max: float           # speed limit, m/s
    T_min: float           # thrust magnitude lower bound, N
    T_max: float           # thrust magnitude upper bound, N
    Tdot_min: float        # thrust rate lower bound, N/s (negative)
    Tdot_max: float        # thrust rate upper bound, N/s
    theta_T_max: float     # max thrust tilt from vertical, rad
    theta_gs: float        # glide-slope cone half-angle from vertical, rad

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.shape != (3,):
            raise ValueError("gravity must be a 3-vector")
        if not (0 < self.T_min < self.T_max):
            raise ValueError("thrust bounds must satisfy 0 < T_min < T_max")
        if not (self.Tdot_min < 0 < self.Tdot_max):
            raise ValueError("thrust rate bounds must straddle zero")
        if self.m_dry <= 0 or self.I_sp <= 0 or self.v_max <= 0:
            raise ValueError("physical parameters must be positive")

    @property
    def g0(self) -> float:
        """Standard gravity magnitude used in the fuel-consumption equation."""
        return float(np.linalg.norm(self.g))

    def scaled(self, mass_unit: float = 1e3) -> "VehicleParams":
        """Copy in (m, s, Mg, kN) units.

        Mass and force scale together, so every dynamics formula is unchanged
        (1 kN / 1 Mg = 1 m/s^2); only the density constant carries the unit.
        """
        return replace(
            self,
            rho0=self.rho0 / mass_unit,
            m_dry=self.m_dry / mass_unit,
            T_min=self.T_min / mass_unit,
            T_max=self.T_max / mass_unit,
            Tdot_min=self.Tdot_min / mass_unit,
            Tdot_max=self.Tdot_max / mass_unit,
        )


@dataclass
class BoundaryConditions:
    r0: np.ndarray         # initial position, m
    v0: np.ndarray         # initial velocity, m/s
    m0: float              # initial (wet) mass, kg
    t_f0: float            # initial final-time guess, s

    def __post_init__(self):
        self.r0 = np.asarray(self.r0, dtype=np.float64)
        self.v0 = np.asarray(self.v0, dtype=np.float64)
        if self.r0.shape != (3,) or self.v0.shape != (3,):
            raise ValueError("r0 and v0 must be 3-vectors")

    def validate_against(self, params: VehicleParams) -> None:
        if self.m0 <= params.m_dry:
            raise ValueError("initial mass must exceed dry mass")
        horiz = math.hypot(self.r0[0], self.r0[2])
        if horiz > math.tan(params.theta_gs) * self.r0[1]:
            raise ValueError("initial position lies outside the glide-slope cone")


@dataclass
class ScWeights:
    w_m_f: float           # final-mass reward weight, 1/kg
    w_eta_dt: float        # time-step trust-region weight, 1/s
    w_eta_T: float         # thrust trust-region weight, 1/N (converted from 1/kN)
    w_kappa_aR: float      # virtual acceleration penalty, s^2/m
    k_f: int               # coarse grid step count
    k_fine: int            # verification grid step count
    eps_r: float           # landing position tolerance, m
    eps_v: float           # landing velocity tolerance, m/s
    N_sc_max: int = 30     # successive step cap

    def __post_init__(self):
        if min(self.w_m_f, self.w_eta_dt, self.w_eta_T, self.w_kappa_aR) <= 0:
            raise ValueError("weights must be positive")
        if self.k_f < 2 or self.k_fine < self.k_f:
            raise ValueError("need k_f >= 2 and k_fine >= k_f")


_SCALAR_KEYS = {
    "rho0", "c_rho", "S_ref", "C_D", "m_dry", "I_sp", "v_max", "m0", "t_f0",
    "T_min", "T_max", "Tdot_min", "Tdot_max", "theta_T_max_deg", "theta_gs_deg",
    "w_m_f", "w_eta_dt", "w_eta_T", "w_kappa_aR", "eps_r", "eps_v",
}
_INT_KEYS = {"N_iter", "k_f", "k_fine"}
_VECTOR_KEYS = {"g", "r0", "v0"}
_ALL_KEYS = _SCALAR_KEYS | _INT_KEYS | _VECTOR_KEYS


def parse_config(text: str):
    """Parse key=value lines into (VehicleParams, BoundaryConditions, ScWeights, N_iter).

    Unknown keys are rejected; '#' starts a comment.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _VECTOR_KEYS:
                parts = val.replace(",", " ").split()
                values[key] = np.array([float(t) for t in parts])
            elif key in _INT_KEYS:
                values[key] = int(val)
            else:
                values[key] = float(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    missing = _ALL_KEYS - set(values)
    if missing:
        raise ConfigError(f"missing keys: {', '.join(sorted(missing))}")

    params = VehicleParams(
        rho0=values["rho0"], c_rho=values["c_rho"], S_ref=values["S_ref"],
        C_D=values["C_D"], g=values["g"], m_dry=values["m_dry"], I_sp=values["I_sp"],
        v_max=values["v_max"], T_min=values["T_min"], T_max=values["T_max"],
        Tdot_min=values["Tdot_min"], Tdot_max=values["Tdot_max"],
        theta_T_max=math.radians(values["theta_T_max_deg"]),
        theta_gs=math.radians(values["theta_gs_deg"]),
    )
    bc = BoundaryConditions(r0=values["r0"], v0=values["v0"], m0=values["m0"],
                            t_f0=values["t_f0"])
    weights = ScWeights(
        w_m_f=values["w_m_f"], w_eta_dt=values["w_eta_dt"],
        w_eta_T=values["w_eta_T"] / 1e3,   # file carries 1/kN
        w_kappa_aR=values["w_kappa_aR"],
        k_f=values["k_f"], k_fine=values["k_fine"],
        eps_r=values["eps_r"], eps_v=values["eps_v"],
    )
    return params, bc, weights, values["N_iter"]


def format_config(params: VehicleParams, bc: BoundaryConditions,
                  weights: ScWeights, n_iter: int = 60) -> str:
    def vec(v):
        return ", ".join(repr(float(t)) for t in v)

    return "\n".join([
        f"rho0 = {params.rho0!r}",
        f"c_rho = {params.c_rho!r}",
        f"S_ref = {params.S_ref!r}",
        f"C_D = {params.C_D!r}",
        f"g = {vec(params.g)}",
        f"m_dry = {params.m_dry!r}",
        f"I_sp = {params.I_sp!r}",
        f"v_max = {params.v_max!r}",
        f"m0 = {bc.m0!r}",
        f"t_f0 = {bc.t_f0!r}",
        f"r0 = {vec(bc.r0)}",
        f"v0 = {vec(bc.v0)}",
        f"T_min = {params.T_min!r}",
        f"T_max = {params.T_max!r}",
        f"Tdot_min = {params.Tdot_min!r}",
        f"Tdot_max = {params.Tdot_max!r}",
        f"theta_T_max_deg = {math.degrees(params.theta_T_max)!r}",
        f"theta_gs_deg = {math.degrees(params.theta_gs)!r}",
        f"N_iter = {n_iter}",
        f"k_f = {weights.k_f}",
        f"w_m_f = {weights.w_m_f!r}",
        f"w_eta_dt = {weights.w_eta_dt!r}",
        f"w_eta_T = {weights.w_eta_T * 1e3!r}",
        f"w_kappa_aR = {weights.w_kappa_aR!r}",
        f"k_fine = {weights.k_fine}",
        f"eps_r = {weights.eps_r!r}",
        f"eps_v = {weights.eps_v!r}",
    ]) + "\n"


def sample_scenario():
    """Packaged demo scenario: a drag-affected vertical landing from 4 km."""
    params = VehicleParams(
        rho0=1.225, c_rho=1e-4, S_ref=10.0, C_D=0.5,
        g=np.array([0.0, -9.8, 0.0]),
        m_dry=30_000.0, I_sp=300.0, v_max=340.0,
        T_min=300e3, T_max=1000e3, Tdot_min=-100e3, Tdot_max=100e3,
        theta_T_max=math.radians(30.0), theta_gs=math.radians(80.0),
    )
    bc = BoundaryConditions(
        r0=np.array([-1000.0, 4000.0, 500.0]),
        v0=np.array([-50.0, -200.0, -100.0]),
        m0=40_000.0, t_f0=35.0,
    )
    weights = ScWeights(
        w_m_f=1.0, w_eta_dt=0.1, w_eta_T=0.01 / 1e3, w_kappa_aR=500_000.0,
        k_f=30, k_fine=300, eps_r=2.0, eps_v=0.2,
    )
    return params, bc, weights


def load_config(path):
    return parse_config(Path(path).read_text())
