"""Dense bounded-variable revised simplex returning primal values and row duals.

Rows are brought to equality form with one slack per inequality row. A crash
basis uses those slacks wherever the starting point satisfies the row and an
artificial variable otherwise; phase I drives the artificials to zero, phase II
optimises the true cost with the artificials fixed at zero. Pricing is Dantzig's
rule with lowest-index tie-breaking, switching to Bland's rule once a phase has
run 5 * (n + m) iterations.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from ..errors import SolverStall
from .problem import FEAS_TOL, LpProblem, LpSolution, LpStatus

logger = logging.getLogger(__name__)

OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
RATIO_TIE_TOL = 1e-12
BLAND_FACTOR = 5
STALL_FACTOR = 50

_LOWER, _UPPER, _FREE, _BASIC = 0, 1, 2, 3


class _Tableau:
    def __init__(self, p: LpProblem):
        n, m_eq, m_ub = p.n, p.m_eq, p.m_ub
        m = m_eq + m_ub
        self.n, self.m = n, m
        A = np.zeros((m, n + m_ub))
        A[:m_eq, :n] = p.eq_matrix
        A[m_eq:, :n] = p.ub_matrix
        A[m_eq:, n:] = np.eye(m_ub)
        self.b = np.concatenate([p.eq_rhs, p.ub_rhs])
        lower = np.concatenate([p.lower, np.zeros(m_ub)])
        upper = np.concatenate([p.upper, np.full(m_ub, np.inf)])

        # nonbasic start: nearest finite bound, free variables at zero
        x = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
        status = np.where(np.isfinite(lower), _LOWER, np.where(np.isfinite(upper), _UPPER, _FREE))
        residual = self.b - A[:, :n] @ x[:n]

        basis = np.empty(m, dtype=int)
        art_cols = []
        for i in range(m):
            slack = n + (i - m_eq)
            if i >= m_eq and residual[i] >= 0:
                basis[i] = slack
                continue
            col = np.zeros(m)
            col[i] = 1.0 if residual[i] >= 0 else -1.0
            basis[i] = n + m_ub + len(art_cols)
            art_cols.append(col)
        n_art = len(art_cols)
        if n_art:
            A = np.hstack([A, np.column_stack(art_cols)])
        self.A = A
        self.lower = np.concatenate([lower, np.zeros(n_art)])
        self.upper = np.concatenate([upper, np.full(n_art, np.inf)])
        self.x = np.concatenate([x, np.zeros(n_art)])
        self.status = np.concatenate([status, np.full(n_art, _LOWER)])
        self.status[basis] = _BASIC
        self.basis = basis
        self.first_art = n + m_ub
        self.cost = np.zeros(A.shape[1])
        self.iterations = 0
        self._refresh()

    @property
    def n_total(self) -> int:
        return self.A.shape[1]

    def _refresh(self):
        if self.m == 0:
            self.lu = None
            return
        self.lu = linalg.lu_factor(self.A[:, self.basis], check_finite=False)
        nonbasic = self.status != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = linalg.lu_solve(self.lu, rhs, check_finite=False)

    def duals(self) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return linalg.lu_solve(self.lu, self.cost[self.basis], trans=1, check_finite=False)

    def _entering(self, d: np.ndarray, tol: float, bland: bool) -> int | None:
        movable = (self.status != _BASIC) & (self.lower < self.upper)
        eligible = movable & (
            ((self.status == _LOWER) & (d < -tol))
            | ((self.status == _UPPER) & (d > tol))
            | ((self.status == _FREE) & (np.abs(d) > tol))
        )
        candidates = np.flatnonzero(eligible)
        if candidates.size == 0:
            return None
        if bland:
            return int(candidates[0])
        return int(candidates[np.argmax(np.abs(d[candidates]))])

    def _leaving(self, delta: np.ndarray, bland: bool) -> tuple[float, int | None]:
        xb = self.x[self.basis]
        lb, ub = self.lower[self.basis], self.upper[self.basis]
        limits = np.full(self.m, np.inf)
        dec = (delta < -PIVOT_TOL) & np.isfinite(lb)
        inc = (delta > PIVOT_TOL) & np.isfinite(ub)
        limits[dec] = np.maximum(xb[dec] - lb[dec], 0.0) / -delta[dec]
        limits[inc] = np.maximum(ub[inc] - xb[inc], 0.0) / delta[inc]
        t = limits.min(initial=np.inf)
        if not np.isfinite(t):
            return t, None
        ties = np.flatnonzero(limits <= t + RATIO_TIE_TOL * (1.0 + t))
        if bland:
            row = ties[np.argmin(self.basis[ties])]
        else:
            # largest pivot among ties, then lowest variable index
            size = np.abs(delta[ties])
            best = ties[size >= size.max() * (1 - 1e-12)]
            row = best[np.argmin(self.basis[best])]
        return t, int(row)

    def run(self, cost: np.ndarray, max_iter: int) -> LpStatus:
        self.cost = cost
        scale = 1.0 + np.abs(cost).max(initial=0.0)
        bland_after = BLAND_FACTOR * (self.n_total + self.m)
        for it in range(max_iter):
            y = self.duals()
            d = cost - self.A.T @ y
            bland = it >= bland_after
            j = self._entering(d, OPT_TOL * scale, bland)
            if j is None:
                return LpStatus.OPTIMAL
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = linalg.lu_solve(self.lu, self.A[:, j], check_finite=False) if self.m else np.zeros(0)
            delta = -direction * alpha
            t_basis, row = self._leaving(delta, bland)
            t_flip = self.upper[j] - self.lower[j]
            self.iterations += 1

            if t_flip <= t_basis:
                if not np.isfinite(t_flip):
                    return LpStatus.UNBOUNDED
                self.status[j] = _UPPER if direction > 0 else _LOWER
                self.x[j] = self.upper[j] if direction > 0 else self.lower[j]
            else:
                if row is None:
                    return LpStatus.UNBOUNDED
                leaving = self.basis[row]
                to_lower = delta[row] < 0
                self.status[leaving] = _LOWER if to_lower else _UPPER
                self.x[leaving] = self.lower[leaving] if to_lower else self.upper[leaving]
                self.basis[row] = j
                self.status[j] = _BASIC
            self._refresh()
        raise SolverStall(f"Simplex did not converge within {max_iter} iterations")

    def drive_out_artificials(self):
        for row in range(self.m):
            if self.basis[row] < self.first_art:
                continue
            r = np.zeros(self.m)
            r[row] = 1.0
            # row of B^-1 A over the real columns
            pivots = linalg.lu_solve(self.lu, r, trans=1, check_finite=False) @ self.A[:, : self.first_art]
            candidates = np.flatnonzero(
                (np.abs(pivots) > 1e-7) & (self.status[: self.first_art] != _BASIC)
                & (self.lower[: self.first_art] < self.upper[: self.first_art])
            )
            if candidates.size == 0:
                continue  # redundant row: the artificial stays basic at zero
            j = int(candidates[0])
            self.status[self.basis[row]] = _LOWER
            self.x[self.basis[row]] = 0.0
            self.basis[row] = j
            self.status[j] = _BASIC
            self._refresh()


def solve_lp(p: LpProblem, max_iter: int | None = None) -> LpSolution:
    tab = _Tableau(p)
    limit = max_iter or STALL_FACTOR * (tab.n_total + tab.m)
    n_art = tab.n_total - tab.first_art

    if n_art:
        phase1 = np.zeros(tab.n_total)
        phase1[tab.first_art :] = 1.0
        tab.run(phase1, limit)
        infeasibility = float(tab.x[tab.first_art :].sum())
        scale = 1.0 + np.abs(tab.b).max(initial=0.0)
        if infeasibility > FEAS_TOL * scale:
            logger.debug("LP infeasible: phase I residual %.3g", infeasibility)
            return _empty(p, LpStatus.INFEASIBLE, tab.iterations)
        tab.upper[tab.first_art :] = 0.0
        tab.x[tab.first_art :] = np.where(tab.status[tab.first_art :] == _BASIC, tab.x[tab.first_art :], 0.0)
        tab.drive_out_artificials()

    cost = np.zeros(tab.n_total)
    cost[: p.n] = p.cost
    status = tab.run(cost, limit)
    if status is not LpStatus.OPTIMAL:
        return _empty(p, status, tab.iterations)

    y = tab.duals()
    x = tab.x[: p.n].copy()
    return LpSolution(
        x=x,
        objective=float(p.cost @ x),
        duals_ub=-y[p.m_eq :],
        duals_eq=y[: p.m_eq],
        status=LpStatus.OPTIMAL,
        iterations=tab.iterations,
    )


def _empty(p: LpProblem, status: LpStatus, iterations: int) -> LpSolution:
    return LpSolution(
        x=np.full(p.n, np.nan),
        objective=np.nan,
        duals_ub=np.zeros(p.m_ub),
        duals_eq=np.zeros(p.m_eq),
        status=status,
        iterations=iterations,
    )


def _alternating(m: int) -> np.ndarray:
    return np.where(np.arange(m) % 2 == 0, 1.0, -1.0)


def dual_degeneracy(p: LpProblem, s: LpSolution, delta: float = 1e-7, tol: float = 1e-3) -> bool:
    """True when nearby right-hand sides select a visibly different dual vector.

    Any optimal dual is still a valid subgradient, so callers log this rather than fail.
    """
    if not s.optimal or p.m_ub == 0:
        return False
    pattern = _alternating(p.m_ub)
    for sign in (1.0, -1.0):
        nearby = solve_lp(p.with_ub_rhs(p.ub_rhs + sign * delta * pattern))
        if not nearby.optimal:
            return True
        if np.abs(nearby.duals_ub - s.duals_ub).max() > tol:
            return True
    return False
