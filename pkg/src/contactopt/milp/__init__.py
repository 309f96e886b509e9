"""Mixed-integer linear models, LP-file export and solve backends."""
from .lpfile import read_lp, write_lp
from .model import (
    BINARY,
    CONTINUOUS,
    EQ,
    GE,
    LE,
    LinExpr,
    MilpModel,
    ModelError,
    VarId,
    VarKind,
    lin,
)
from .solve import (
    BACKENDS,
    MilpConfig,
    MilpSolution,
    Status,
    branch_and_bound,
    enumerate_binaries,
    solve,
)

__all__ = [
    "BACKENDS", "BINARY", "CONTINUOUS", "EQ", "GE", "LE", "LinExpr", "MilpConfig",
    "MilpModel", "MilpSolution", "ModelError", "Status", "VarId", "VarKind",
    "branch_and_bound", "enumerate_binaries", "lin", "read_lp", "solve", "write_lp",
]
