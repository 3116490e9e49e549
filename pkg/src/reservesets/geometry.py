"""Ellipsoidal gauge and support functions for sets U = {u : ||L^-1 u|| <= rho}."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegenerateShape, NotPSD, ZeroDirection, ZeroRealization

DIAG_FLOOR = 1e-6
DIRECTION_TOL = 1e-12
TRACE_TOL = 1e-9
JITTER_RETRIES = 3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CholeskyShape:
    """Lower-triangular shape factor L with diagonal >= diag_floor (Sigma = L L^T)."""

    entries: np.ndarray
    diag_floor: float = DIAG_FLOOR
    normalized: bool = False
    dim: int = field(init=False)

    def __post_init__(self):
        L = _frozen(self.entries)
        if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] == 0:
            raise DegenerateShape(f"Shape must be a non-empty square matrix, got {L.shape}")
        if not np.all(np.isfinite(L)):
            raise DegenerateShape("Shape has non-finite entries")
        if np.any(np.triu(L, 1) != 0.0):
            raise DegenerateShape("Shape must be lower-triangular (upper triangle identically 0)")
        if np.any(np.diag(L) < self.diag_floor):
            raise DegenerateShape(f"Shape diagonal below floor {self.diag_floor}: min is {np.diag(L).min():.3g}")
        if self.normalized and abs(float(np.sum(L * L)) - L.shape[0]) > TRACE_TOL:
            raise DegenerateShape(f"Shape flagged trace-normalized but tr(LL^T) = {np.sum(L * L)!r}")
        object.__setattr__(self, "entries", L)
        object.__setattr__(self, "dim", L.shape[0])

    @classmethod
    def identity(cls, d: int) -> CholeskyShape:
        return cls(np.eye(d), normalized=True)

    @property
    def sigma(self) -> np.ndarray:
        return self.entries @ self.entries.T

    def to_json(self) -> dict:
        return {"dim": self.dim, "rows": self.entries.tolist()}

    @classmethod
    def from_json(cls, obj: dict, diag_floor: float = DIAG_FLOOR) -> CholeskyShape:
        rows = np.asarray(obj["rows"], dtype=float)
        if rows.shape != (obj["dim"], obj["dim"]):
            raise DegenerateShape(f"Shape JSON declares dim {obj['dim']} but rows are {rows.shape}")
        normalized = abs(float(np.sum(rows * rows)) - rows.shape[0]) <= TRACE_TOL
        return cls(rows, diag_floor=diag_floor, normalized=normalized)


@dataclass(frozen=True, eq=False)
class ShapeGradient:
    """Frobenius gradient with respect to the free (lower-triangular) entries of L."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(np.tril(np.asarray(self.entries, dtype=float))))

    @classmethod
    def zeros(cls, d: int) -> ShapeGradient:
        return cls(np.zeros((d, d)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def __add__(self, other: ShapeGradient) -> ShapeGradient:
        return ShapeGradient(self.entries + other.entries)

    def __mul__(self, c: float) -> ShapeGradient:
        return ShapeGradient(c * self.entries)

    __rmul__ = __mul__


def _whiten(L: CholeskyShape, u: np.ndarray) -> np.ndarray:
    return linalg.solve_triangular(L.entries, u, lower=True, check_finite=False)


def gauge(L: CholeskyShape, u: np.ndarray) -> float:
    return float(np.linalg.norm(_whiten(L, np.asarray(u, dtype=float))))


def gauges(L: CholeskyShape, us: np.ndarray) -> np.ndarray:
    """Row-wise gauge of an (n, d) array of realizations."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    return np.linalg.norm(_whiten(L, us.T), axis=0)


def in_set(L: CholeskyShape, rho: float, u: np.ndarray) -> bool:
    return gauge(L, u) <= rho


def support(L: CholeskyShape, rho: float, w: np.ndarray) -> float:
    return rho * float(np.linalg.norm(L.entries.T @ np.asarray(w, dtype=float)))


def grad_support_L(L: CholeskyShape, rho: float, w: np.ndarray, tol: float = DIRECTION_TOL) -> ShapeGradient:
    w = np.asarray(w, dtype=float)
    Ltw = L.entries.T @ w
    norm = float(np.linalg.norm(Ltw))
    if norm <= tol:
        raise ZeroDirection(f"L^T w vanishes (norm {norm:.3g}); support function is not differentiable here")
    return ShapeGradient(rho * np.outer(w, Ltw) / norm)


def grad_gauge_L(L: CholeskyShape, u: np.ndarray) -> ShapeGradient:
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ZeroRealization("Gauge gradient is undefined at u = 0")
    v = _whiten(L, u)
    y = linalg.solve_triangular(L.entries, v, lower=True, trans="T", check_finite=False)
    return ShapeGradient(-np.outer(y, v) / np.linalg.norm(v))


def weighted_gauge_grad(L: CholeskyShape, us: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_i weights_i * grad_gauge_L(L, u_i) without forming the n gradients."""
    V = _whiten(L, np.atleast_2d(us).T)
    s = np.linalg.norm(V, axis=0)
    Y = linalg.solve_triangular(L.entries, V, lower=True, trans="T", check_finite=False)
    coef = np.divide(weights, s, out=np.zeros_like(s), where=s > 0)
    return np.tril(-(Y * coef) @ V.T)


def project_shape(M: np.ndarray, diag_floor: float = DIAG_FLOOR, normalize_trace: bool = True) -> CholeskyShape:
    L = np.tril(np.asarray(M, dtype=float))
    d = L.shape[0]
    idx = np.diag_indices(d)
    L[idx] = np.maximum(L[idx], diag_floor)
    if normalize_trace:
        L *= np.sqrt(d / np.sum(L * L))
        # floor^2 * d stays far below the trace tolerance, so re-clamping keeps tr(LL^T) = d
        L[idx] = np.maximum(L[idx], diag_floor)
    return CholeskyShape(L, diag_floor=diag_floor, normalized=normalize_trace)


def cholesky_factor(Sigma: np.ndarray, diag_floor: float = DIAG_FLOOR) -> CholeskyShape:
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotPSD(f"Covariance must be square, got {S.shape}")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise NotPSD("Covariance is not symmetric")
    scale = np.linalg.norm(S, 2)
    if np.linalg.eigvalsh(S).min() < -1e-10 * scale:
        raise NotPSD("Covariance has a negative eigenvalue")

    d = S.shape[0]
    jitter = 1e-8 * np.trace(S) / d
    for attempt in range(JITTER_RETRIES + 1):
        try:
            L = linalg.cholesky(S + attempt * jitter * np.eye(d), lower=True)
        except linalg.LinAlgError:
            continue
        if np.all(np.diag(L) >= diag_floor):
            return CholeskyShape(L, diag_floor=diag_floor)
    raise NotPSD(f"Cholesky failed after {JITTER_RETRIES} jitter retries")


def vech(L: np.ndarray) -> np.ndarray:
    """Lower triangle of L, row by row (length d(d+1)/2)."""
    L = np.asarray(L)
    return L[np.tril_indices(L.shape[0])].copy()


def unvech(v: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((d, d))
    out[np.tril_indices(d)] = v
    return out
