from .matrix import SparseMat, read_coordinate, write_coordinate
from .amd import amd_order
from .ldl import (
    NumericFactorization,
    RefinementDivergence,
    RegularizationSettings,
    SymbolicFactorization,
    SerializationError,
    deserialize_symbolic,
    numeric_ldl,
    serialize_symbolic,
    solve_refined,
    symbolic_ldl,
)

__all__ = [
    "SparseMat",
    "read_coordinate",
    "write_coordinate",
    "amd_order",
    "SymbolicFactorization",
    "NumericFactorization",
    "RegularizationSettings",
    "RefinementDivergence",
    "SerializationError",
    "symbolic_ldl",
    "numeric_ldl",
    "solve_refined",
    "serialize_symbolic",
    "deserialize_symbolic",
]
