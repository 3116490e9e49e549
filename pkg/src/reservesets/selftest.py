"""Oracle suites run by `reservesets selftest`: finite differences, vertex enumeration, Monte-Carlo coverage."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .data import stream
from .geometry import CholeskyShape, gauge, grad_gauge_L, grad_support_L, support
from .lp import brute_force_lp, check_solution, dual_degeneracy, random_lp, solve_lp
from .quantile import conformal_index
from .sced import Generator, TransferLimits, Zone, ZonalSystem, envelope_grad_L, envelope_grad_rho, solve_sced

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
VALUE_FD_STEP = 1e-5
COVERAGE_Z = 3.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_shape(rng: np.random.Generator, d: int) -> CholeskyShape:
    L = np.tril(0.3 * rng.standard_normal((d, d)), -1) + np.diag(rng.uniform(0.5, 1.5, d))
    return CholeskyShape(L)


def shape_fd(f: Callable[[CholeskyShape], float], L: CholeskyShape, h: float = FD_STEP) -> np.ndarray:
    """Central differences of f over the lower-triangular entries of L."""
    out = np.zeros((L.dim, L.dim))
    for i, j in zip(*np.tril_indices(L.dim), strict=True):
        E = np.zeros_like(out)
        E[i, j] = h
        out[i, j] = (f(CholeskyShape(L.entries + E)) - f(CholeskyShape(L.entries - E))) / (2 * h)
    return out


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-12))


def toy_system(rng: np.random.Generator, d: int, n_zones: int) -> ZonalSystem:
    """Small system with two generators per zone and ample capacity."""
    loads = rng.uniform(50, 100, n_zones)
    zones = tuple(Zone(z + 1, float(loads[z])) for z in range(n_zones))
    gens = []
    for z in range(n_zones):
        for _ in range(2):
            gens.append(
                Generator(
                    z + 1,
                    0.0,
                    float(rng.uniform(2, 3) * loads.sum()),
                    float(rng.uniform(10, 40)),
                    float(rng.uniform(1, 8)),
                )
            )
    return ZonalSystem(zones, tuple(gens), rng.standard_normal((n_zones, d)))


def transfer_toy() -> tuple[ZonalSystem, TransferLimits]:
    """Two zones where zone 1's cheap export is capped by a binding transfer row."""
    system = ZonalSystem(
        zones=(Zone(1, 50.0), Zone(2, 150.0)),
        generators=(Generator(1, 0.0, 300.0, 10.0, 2.0), Generator(2, 0.0, 300.0, 30.0, 3.0)),
        allocation=np.eye(2),
    )
    return system, TransferLimits({1: 100.0, 2: 1000.0}, frozenset({1}))


def value_fd_check(system, L, rho, tl=None) -> tuple[float, float]:
    """(shape rel err, radius rel err) of envelope gradients against value finite differences."""
    sol = solve_sced(system, L, rho, tl)
    G = envelope_grad_L(system, sol, L, rho).entries
    G_fd = shape_fd(lambda M: solve_sced(system, M, rho, tl).objective, L, VALUE_FD_STEP)
    h = VALUE_FD_STEP
    g_rho = envelope_grad_rho(system, sol, L)
    g_rho_fd = (solve_sced(system, L, rho + h, tl).objective - solve_sced(system, L, rho - h, tl).objective) / (2 * h)
    return rel_err(G_fd, G), abs(g_rho_fd - g_rho) / max(abs(g_rho), 1e-12)


def check_ellipsoid_gradients(seed: int) -> CheckResult:
    rng = stream(seed, "selftest")
    worst = 0.0
    for d in (2, 4, 8):
        for _ in range(10):
            L = random_shape(rng, d)
            w, u = rng.standard_normal(d), rng.standard_normal(d)
            rho = float(rng.uniform(0.5, 3))
            worst = max(
                worst,
                rel_err(shape_fd(lambda M, w=w, rho=rho: support(M, rho, w), L), grad_support_L(L, rho, w).entries),
                rel_err(shape_fd(lambda M, u=u: gauge(M, u), L), grad_gauge_L(L, u).entries),
            )
    return CheckResult("ellipsoid gradients", worst <= 1e-5, f"worst rel err {worst:.2e}")


def check_lp_oracle(seed: int, instances: int = 20) -> CheckResult:
    rng = stream(seed, "selftest")
    worst, problems = 0.0, []
    for _ in range(instances):
        p = random_lp(rng)
        s = solve_lp(p)
        best = brute_force_lp(p)
        if best is None or not s.optimal:
            problems.append(f"status {s.status.value}")
            continue
        worst = max(worst, abs(s.objective - best[0]))
        problems += check_solution(p, s)
    ok = worst <= 1e-8 and not problems
    return CheckResult("simplex vs vertex enumeration", ok, f"worst gap {worst:.2e}; {problems[:3] or 'duals clean'}")


def check_envelope(seed: int, instances: int = 10) -> CheckResult:
    rng = stream(seed, "selftest")
    worst, tried = 0.0, 0
    for _ in range(10 * instances):
        if tried == instances:
            break
        d, n_zones = (2, 4)[tried % 2], (1, 3)[(tried // 2) % 2]
        system, L = toy_system(rng, d, n_zones), random_shape(rng, d)
        rho = float(rng.uniform(1, 3))
        sol = solve_sced(system, L, rho)
        if not sol.optimal or dual_degeneracy(sol.problem, sol.lp):
            continue
        tried += 1
        worst = max(worst, *value_fd_check(system, L, rho))
    if tried < instances:
        return CheckResult("envelope gradients vs value differences", False, f"only {tried} clean instances found")
    system, tl = transfer_toy()
    worst = max(worst, *value_fd_check(system, CholeskyShape(np.eye(2)), 2.0, tl))
    return CheckResult("envelope gradients vs value differences", worst <= 1e-4, f"worst rel err {worst:.2e}")


def conformal_band(tau: float, n_cal: int, trials: int, z: float = COVERAGE_Z) -> tuple[float, float]:
    """Acceptance band for the Monte-Carlo mean coverage of a split-conformal radius.

    Exact coverage lies in [tau, tau + 1/(n_cal+1)]; the upper edge allows one more
    rank of slack for ties, and both edges widen by z binomial standard errors of a
    mean over `trials` fresh points. For tau = 0.9, n_cal = 99, 2000 trials this is
    about [0.880, 0.940].
    """
    sigma = math.sqrt(tau * (1 - tau) / trials)
    return tau - z * sigma, tau + 2 / (n_cal + 1) + z * sigma


def check_conformal(seed: int, trials: int = 2000, n_cal: int = 99, tau: float = 0.9) -> CheckResult:
    rng = stream(seed, "selftest")
    s = np.linalg.norm(rng.standard_normal((trials, n_cal + 1, 3)), axis=2)
    k = conformal_index(n_cal, tau)
    radius = np.sort(s[:, :n_cal], axis=1)[:, k - 1]
    coverage = float(np.mean(s[:, n_cal] <= radius))
    lo, hi = conformal_band(tau, n_cal, trials)
    detail = f"mean coverage {coverage:.4f} in [{lo:.4f}, {hi:.4f}]"
    return CheckResult("conformal coverage", lo <= coverage <= hi, detail)


def check_robust_abs(seed: int, instances: int = 20, samples: int = 10_000) -> CheckResult:
    rng = stream(seed, "selftest")
    worst = -math.inf
    for _ in range(instances):
        d = 3
        L = random_shape(rng, d)
        f, w, rho = float(rng.normal()), rng.standard_normal(d), float(rng.uniform(0.5, 2))
        v = rng.standard_normal((samples, d))
        v *= (rng.uniform(size=samples) ** (1 / d) / np.linalg.norm(v, axis=1))[:, None]
        us = rho * v @ L.entries.T
        worst = max(worst, float(np.abs(f + us @ w).max() - (abs(f) + support(L, rho, w))))
    return CheckResult("robust absolute value bound", worst <= 1e-9, f"max excess {worst:.2e}")


SUITES = (check_ellipsoid_gradients, check_lp_oracle, check_envelope, check_conformal, check_robust_abs)


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []
    for suite in SUITES:
        result = suite(seed)
        logger.debug("%s: %s", result.name, result.detail)
        results.append(result)
    return results
