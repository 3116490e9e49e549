"""Brute-force vertex enumeration and random instances for checking the simplex."""

from itertools import combinations

import numpy as np

from ..errors import BadParams
from .problem import LpProblem

VERTEX_TOL = 1e-9


def brute_force_lp(p: LpProblem) -> tuple[float, np.ndarray] | None:
    """Best vertex of a box-bounded LP, or None when no vertex is feasible."""
    if not (np.all(np.isfinite(p.lower)) and np.all(np.isfinite(p.upper))):
        raise BadParams("Vertex enumeration needs finite variable bounds")
    n = p.n
    eye = np.eye(n)
    G = np.vstack([p.ub_matrix, eye, -eye])
    h = np.concatenate([p.ub_rhs, p.upper, -p.lower])
    free = n - p.m_eq
    best: tuple[float, np.ndarray] | None = None
    for rows in combinations(range(G.shape[0]), free):
        M = np.vstack([p.eq_matrix, G[list(rows)]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, np.concatenate([p.eq_rhs, h[list(rows)]]))
        if np.any(G @ x > h + VERTEX_TOL * (1 + np.abs(h))):
            continue
        value = float(p.cost @ x)
        if best is None or value < best[0]:
            best = (value, x)
    return best


def random_lp(rng: np.random.Generator, n: int = 5, m_ub: int = 6, m_eq: int = 0) -> LpProblem:
    """Feasible box-bounded LP built around a random interior point."""
    x0 = rng.uniform(0.2, 0.8, size=n)
    A = rng.normal(size=(m_ub, n))
    E = rng.normal(size=(m_eq, n))
    return LpProblem(
        cost=rng.normal(size=n),
        eq_matrix=E,
        eq_rhs=E @ x0,
        ub_matrix=A,
        ub_rhs=A @ x0 + rng.uniform(0.05, 0.5, size=m_ub),
        lower=np.zeros(n),
        upper=np.ones(n),
    )
