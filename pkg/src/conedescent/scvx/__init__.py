from .params import (
    BoundaryConditions,
    ConfigError,
    ScWeights,
    VehicleParams,
    format_config,
    parse_config,
    sample_scenario,
)
from .dynamics import (
    DiscretizedDynamics,
    SimulationResult,
    TrajectoryIterate,
    drag,
    initial_reference,
    linearize_discretize,
    mass_rate,
    nonlinear_derivative,
    verify_fine_grid,
)
from .subproblem import SubproblemTemplate, VariableMap
from .driver import ScOutcome, ScStepStats, sc_solve

__all__ = [
    "VehicleParams",
    "BoundaryConditions",
    "ScWeights",
    "ConfigError",
    "parse_config",
    "format_config",
    "sample_scenario",
    "TrajectoryIterate",
    "DiscretizedDynamics",
    "SimulationResult",
    "drag",
    "mass_rate",
    "nonlinear_derivative",
    "linearize_discretize",
    "verify_fine_grid",
    "initial_reference",
    "SubproblemTemplate",
    "VariableMap",
    "ScOutcome",
    "ScStepStats",
    "sc_solve",
]
