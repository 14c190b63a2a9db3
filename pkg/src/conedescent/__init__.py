"""conedescent: a sparse SOCP interior-point solver and powered-descent guidance stack."""

from .cones import ConeLayout, NtScaling
from .ipm import (
    HsdState,
    SocpProblem,
    SolveOutcome,
    SolverSettings,
    SolverStatus,
    cold_start,
    dump_problem,
    load_problem,
    solve,
    warm_start,
)

__version__ = "0.1.0"

__all__ = [
    "ConeLayout",
    "NtScaling",
    "SocpProblem",
    "HsdState",
    "SolverSettings",
    "SolverStatus",
    "SolveOutcome",
    "cold_start",
    "warm_start",
    "solve",
    "load_problem",
    "dump_problem",
    "__version__",
]
