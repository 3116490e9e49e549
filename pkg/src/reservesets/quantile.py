"""Kernel-smoothed quantiles for training and split-conformal radii for deployment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .errors import BadParams, DegenerateWeights, InsufficientCalibration, NumericalError
from .geometry import CholeskyShape, ShapeGradient, gauges, weighted_gauge_grad

BRACKET_WIDTHS = 10.0
WEIGHT_FLOOR = 1e-300
MAX_NUDGES = 64


class Kernel(Enum):
    GAUSSIAN = "gaussian"
    LOGISTIC = "logistic"

    @property
    def dist(self):
        return stats.norm if self is Kernel.GAUSSIAN else stats.logistic


@dataclass(frozen=True, eq=False)
class SmoothedQuantile:
    rho_eps: float
    weights: np.ndarray
    eps: float
    tau: float
    kernel: Kernel = Kernel.GAUSSIAN


@dataclass(frozen=True)
class ConformalRadius:
    rho_tau: float
    k_index: int
    n_cal: int
    tau: float

    def __post_init__(self):
        if not 1 <= self.k_index <= self.n_cal:
            raise BadParams(f"Conformal index {self.k_index} outside [1, {self.n_cal}]")


def scores(L: CholeskyShape, us: np.ndarray) -> np.ndarray:
    return gauges(L, us)


def smoothed_cdf(scores: np.ndarray, r: float, eps: float, kernel: Kernel = Kernel.GAUSSIAN) -> float:
    return float(np.mean(kernel.dist.cdf((r - scores) / eps)))


def smoothed_quantile(
    scores: np.ndarray, tau: float, eps: float, kernel: Kernel | str = Kernel.GAUSSIAN
) -> SmoothedQuantile:
    """inf{r : mean Phi((r - S_i)/eps) >= tau}, with the density weights at that root."""
    kernel = Kernel(kernel)
    s = np.asarray(scores, dtype=float)
    if s.size < 2:
        raise BadParams(f"Smoothed quantile needs at least 2 scores, got {s.size}")
    if not 0.0 < tau < 1.0:
        raise BadParams(f"tau must lie in (0, 1), got {tau}")
    if eps <= 0:
        raise BadParams(f"Bandwidth must be positive, got {eps}")

    def excess(r: float) -> float:
        return smoothed_cdf(s, r, eps, kernel) - tau

    lo, hi = s.min() - BRACKET_WIDTHS * eps, s.max() + BRACKET_WIDTHS * eps
    if excess(lo) > 0 or excess(hi) < 0:
        raise NumericalError(f"Smoothed CDF does not bracket tau={tau} on [{lo:.6g}, {hi:.6g}]")
    root = optimize.brentq(excess, lo, hi, xtol=1e-15 * (1.0 + abs(hi)), rtol=4 * np.finfo(float).eps)
    # step onto the upper side of the root so that F(rho) >= tau
    for _ in range(MAX_NUDGES):
        if excess(root) >= 0:
            break
        root = np.nextafter(root, np.inf)
    if excess(root) < 0:
        raise NumericalError(f"Smoothed quantile root-find stopped {-excess(root):.3g} below tau")
    weights = kernel.dist.pdf((root - s) / eps)
    return SmoothedQuantile(float(root), weights, eps, tau, kernel)


def quantile_sensitivity(L: CholeskyShape, us: np.ndarray, sq: SmoothedQuantile) -> ShapeGradient:
    """Gradient of the smoothed quantile in L: the kernel-weighted mean of gauge gradients."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    weights = np.where(np.any(us != 0.0, axis=1), sq.weights, 0.0)
    total = float(weights.sum())
    if total <= WEIGHT_FLOOR:
        raise DegenerateWeights(f"Kernel weights underflow at eps={sq.eps}; the bandwidth is far too small")
    return ShapeGradient(weighted_gauge_grad(L, us, weights) / total)


def conformal_index(n_cal: int, tau: float) -> int:
    # guard against (n+1)*tau landing a rounding error above an integer
    return math.ceil((n_cal + 1) * tau - 1e-9)


def conformal_radius(cal_scores: np.ndarray, tau: float) -> ConformalRadius:
    s = np.sort(np.asarray(cal_scores, dtype=float), kind="stable")
    n = s.size
    if n < 1:
        raise InsufficientCalibration("Conformal calibration needs at least one score")
    if not 0.0 < tau < 1.0:
        raise BadParams(f"tau must lie in (0, 1), got {tau}")
    k = max(conformal_index(n, tau), 1)
    if k > n:
        raise InsufficientCalibration(f"tau={tau} needs rank {k} but only {n} calibration scores are available")
    return ConformalRadius(float(s[k - 1]), k, n, tau)


def empirical_coverage(L: CholeskyShape, rho: float, us: np.ndarray) -> float:
    return float(np.mean(inclusion(L, rho, us)))


def inclusion(L: CholeskyShape, rho: float, us: np.ndarray) -> np.ndarray:
    """Per-sample 0/1 indicator of closed-set membership."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    if us.shape[0] == 0:
        raise BadParams("Coverage needs at least one realization")
    return (scores(L, us) <= rho).astype(float)


def scores_to_csv(values: np.ndarray, path: Path) -> None:
    pd.DataFrame({"score": np.asarray(values, dtype=float)}).to_csv(
        path, index_label="sample", float_format="%.17g", lineterminator="\n"
    )
