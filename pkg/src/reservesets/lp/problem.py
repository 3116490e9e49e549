"""Dense LP representation, solution contract and plain-text dump."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ..errors import BadParams, NotOptimal

FEAS_TOL = 1e-7
DUAL_SIGN_TOL = 1e-9
SLACKNESS_TOL = 1e-6
GAP_TOL = 1e-6
DUMP_VERSION = 1


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class TagKind(Enum):
    RESERVE = "reserve"
    TRANSFER_UPPER = "transfer_upper"
    TRANSFER_LOWER = "transfer_lower"
    OTHER = "other"


@dataclass(frozen=True)
class RowTag:
    kind: TagKind = TagKind.OTHER
    zone: int | None = None

    def __str__(self) -> str:
        return self.kind.value if self.zone is None else f"{self.kind.value}({self.zone})"


OTHER = RowTag()


def _ro(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LpProblem:
    """min c^T x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lower <= x <= upper."""

    cost: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    ub_matrix: np.ndarray
    ub_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tags: tuple[RowTag, ...] = field(default=())

    def __post_init__(self):
        n = np.asarray(self.cost).size
        m_eq = np.asarray(self.eq_rhs).size
        m_ub = np.asarray(self.ub_rhs).size
        shapes = {
            "cost": (n,),
            "eq_matrix": (m_eq, n),
            "eq_rhs": (m_eq,),
            "ub_matrix": (m_ub, n),
            "ub_rhs": (m_ub,),
            "lower": (n,),
            "upper": (n,),
        }
        for name, shape in shapes.items():
            try:
                object.__setattr__(self, name, _ro(getattr(self, name), shape))
            except ValueError as err:
                raise BadParams(f"LP field '{name}' cannot be shaped {shape}") from err
        object.__setattr__(self, "tags", tuple(self.tags) if self.tags else (OTHER,) * m_ub)
        self._validate()

    def _validate(self):
        if len(self.tags) != self.ub_rhs.size:
            raise BadParams(f"Expected {self.ub_rhs.size} row tags, got {len(self.tags)}")
        for name in ("cost", "eq_matrix", "eq_rhs", "ub_matrix", "ub_rhs", "lower", "upper"):
            if np.any(np.isnan(getattr(self, name))):
                raise BadParams(f"LP field '{name}' contains NaN")
        for name in ("cost", "eq_matrix", "eq_rhs", "ub_matrix", "ub_rhs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise BadParams(f"LP field '{name}' must be finite")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise BadParams(f"Variable {j} has lower bound {self.lower[j]} > upper bound {self.upper[j]}")

    @property
    def n(self) -> int:
        return self.cost.size

    @property
    def m_eq(self) -> int:
        return self.eq_rhs.size

    @property
    def m_ub(self) -> int:
        return self.ub_rhs.size

    def with_ub_rhs(self, ub_rhs: np.ndarray) -> LpProblem:
        return LpProblem(
            self.cost, self.eq_matrix, self.eq_rhs, self.ub_matrix, ub_rhs, self.lower, self.upper, self.tags
        )

    def rows_tagged(self, kind: TagKind) -> dict[int, int]:
        """zone -> ub row index for rows of the given kind."""
        return {t.zone: j for j, t in enumerate(self.tags) if t.kind is kind}


@dataclass(frozen=True, eq=False)
class LpSolution:
    x: np.ndarray
    objective: float
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    status: LpStatus
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _bound_term(d: float, lo: float, hi: float, x: float) -> float:
    if d > 0:
        bound = lo
    elif d < 0:
        bound = hi
    else:
        return 0.0
    if np.isfinite(bound):
        return d * bound
    # the reduced cost should be zero here; anything else means the dual is unbounded below
    return d * x if abs(d) <= DUAL_SIGN_TOL else -np.inf


def dual_objective(p: LpProblem, s: LpSolution) -> float:
    if not s.optimal:
        raise NotOptimal(f"Dual objective requires an optimal solution, status is {s.status.value}")
    reduced = p.cost - p.eq_matrix.T @ s.duals_eq + p.ub_matrix.T @ s.duals_ub
    value = float(p.eq_rhs @ s.duals_eq - p.ub_rhs @ s.duals_ub)
    for j in range(p.n):
        value += _bound_term(reduced[j], p.lower[j], p.upper[j], s.x[j])
    return value


def check_solution(p: LpProblem, s: LpSolution) -> list[str]:
    """Names of violated optimality invariants; empty for a clean optimal solve."""
    if not s.optimal:
        return []
    problems = []
    rhs_scale = 1.0 + max(np.abs(p.eq_rhs).max(initial=0.0), np.abs(p.ub_rhs).max(initial=0.0))
    slack = p.ub_rhs - p.ub_matrix @ s.x
    residual = max(
        np.abs(p.eq_matrix @ s.x - p.eq_rhs).max(initial=0.0),
        (-slack).max(initial=0.0),
        (p.lower - s.x).max(initial=0.0),
        (s.x - p.upper).max(initial=0.0),
    )
    if residual > FEAS_TOL * rhs_scale:
        problems.append(f"primal residual {residual:.3g}")
    if s.duals_ub.size and s.duals_ub.min() < -DUAL_SIGN_TOL:
        problems.append(f"negative inequality dual {s.duals_ub.min():.3g}")
    obj_scale = 1.0 + abs(s.objective)
    if s.duals_ub.size:
        worst = np.abs(s.duals_ub * slack).max()
        if worst > SLACKNESS_TOL * obj_scale:
            problems.append(f"complementary slackness {worst:.3g}")
    gap = abs(s.objective - dual_objective(p, s))
    if gap > GAP_TOL * obj_scale:
        problems.append(f"duality gap {gap:.3g}")
    return problems


def _num(v: float) -> str:
    return f"{v:>26.17e}"


def dump_problem(p: LpProblem, path: Path) -> None:
    """Write p in a fixed-column text format.

    Layout (every numeric column is 26 chars, %.17e):
      N  <n:8> <m_eq:8> <m_ub:8>
      C  <j:8> <cost> <lower> <upper>        one per variable
      E  <i:8> <j:8> <value>                 nonzeros of eq_matrix
      EB <i:8> <rhs>
      U  <i:8> <j:8> <value>                 nonzeros of ub_matrix
      UB <i:8> <rhs> <tag>
    """
    lines = [f"# reservesets LP dump v{DUMP_VERSION}", f"{'N':<3}{p.n:>8d}{p.m_eq:>8d}{p.m_ub:>8d}"]
    for j in range(p.n):
        lines.append(f"{'C':<3}{j:>8d}{_num(p.cost[j])}{_num(p.lower[j])}{_num(p.upper[j])}")
    for prefix, matrix, rhs in (("E", p.eq_matrix, p.eq_rhs), ("U", p.ub_matrix, p.ub_rhs)):
        for i, j in zip(*np.nonzero(matrix), strict=True):
            lines.append(f"{prefix:<3}{i:>8d}{j:>8d}{_num(matrix[i, j])}")
        for i in range(rhs.size):
            tag = f" {p.tags[i]}" if prefix == "U" else ""
            lines.append(f"{prefix + 'B':<3}{i:>8d}{_num(rhs[i])}{tag}")
    path.write_text("\n".join(lines) + "\n")
