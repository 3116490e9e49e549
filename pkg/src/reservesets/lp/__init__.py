"""Dense LP core: problem/solution types and a revised simplex with exact basic duals."""

from .oracle import brute_force_lp, random_lp
from .problem import (
    OTHER,
    LpProblem,
    LpSolution,
    LpStatus,
    RowTag,
    TagKind,
    check_solution,
    dual_objective,
    dump_problem,
)
from .simplex import dual_degeneracy, solve_lp

__all__ = [
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "RowTag",
    "TagKind",
    "OTHER",
    "solve_lp",
    "dual_objective",
    "dual_degeneracy",
    "check_solution",
    "dump_problem",
    "brute_force_lp",
    "random_lp",
]
