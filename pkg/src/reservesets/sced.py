"""Zonal robust SCED: LP builders for the decoupled and transfer-coupled cases, envelope gradients."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadParams, BaseInfeasible, NotOptimal
from .geometry import DIRECTION_TOL, CholeskyShape, ShapeGradient, grad_support_L
from .lp import OTHER, LpProblem, LpSolution, LpStatus, RowTag, TagKind, solve_lp

logger = logging.getLogger(__name__)

SCED_DUAL_TOL = 1e-9


@dataclass(frozen=True)
class Zone:
    id: int
    load_mw: float


@dataclass(frozen=True)
class Generator:
    zone: int
    g_min: float
    g_max: float
    energy_cost: float
    reserve_cost: float


@dataclass(frozen=True, eq=False)
class ZonalSystem:
    zones: tuple[Zone, ...]
    generators: tuple[Generator, ...]
    allocation: np.ndarray  # Z x d; row z is zone z's exposure A_z^T

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "generators", tuple(self.generators))
        A = np.array(self.allocation, dtype=float, ndmin=2)
        A.setflags(write=False)
        object.__setattr__(self, "allocation", A)
        self._validate()

    def _validate(self):
        ids = [z.id for z in self.zones]
        if len(set(ids)) != len(ids):
            raise BadParams(f"Duplicate zone ids: {ids}")
        if self.allocation.shape[0] != len(self.zones):
            raise BadParams(f"Allocation has {self.allocation.shape[0]} rows for {len(self.zones)} zones")
        if not np.all(np.isfinite(self.allocation)):
            raise BadParams("Allocation matrix must be finite")
        for i, gen in enumerate(self.generators):
            if gen.zone not in ids:
                raise BadParams(f"Generator {i} references unknown zone {gen.zone}")
            if gen.g_min > gen.g_max:
                raise BadParams(f"Generator {i} has g_min {gen.g_min} > g_max {gen.g_max}")
        if any(z.load_mw < 0 for z in self.zones):
            raise BadParams("Zone loads must be nonnegative")
        if sum(g.g_max for g in self.generators) < self.total_load:
            raise BadParams("Total generation capacity is below total load")

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @property
    def dim(self) -> int:
        return self.allocation.shape[1]

    @property
    def total_load(self) -> float:
        return float(sum(z.load_mw for z in self.zones))

    @property
    def zone_ids(self) -> list[int]:
        return [z.id for z in self.zones]

    def zone_row(self, zone_id: int) -> int:
        for k, z in enumerate(self.zones):
            if z.id == zone_id:
                return k
        raise BadParams(f"Unknown zone {zone_id}")

    def zone_members(self) -> np.ndarray:
        """Z x G incidence matrix: 1 where generator i sits in zone z."""
        M = np.zeros((self.n_zones, self.n_generators))
        for i, gen in enumerate(self.generators):
            M[self.zone_row(gen.zone), i] = 1.0
        return M

    def to_json(self) -> dict:
        return {
            "zones": [{"id": z.id, "load_mw": z.load_mw} for z in self.zones],
            "generators": [
                {
                    "zone": g.zone,
                    "g_min": g.g_min,
                    "g_max": g.g_max,
                    "energy_cost": g.energy_cost,
                    "reserve_cost": g.reserve_cost,
                }
                for g in self.generators
            ],
            "allocation": self.allocation.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> ZonalSystem:
        return cls(
            zones=tuple(Zone(**z) for z in data["zones"]),
            generators=tuple(Generator(**g) for g in data["generators"]),
            allocation=np.asarray(data["allocation"], dtype=float),
        )


def load_system(path: Path) -> ZonalSystem:
    return ZonalSystem.from_json(json.loads(Path(path).read_text()))


def save_system(system: ZonalSystem, path: Path) -> None:
    Path(path).write_text(json.dumps(system.to_json(), indent=2) + "\n")


@dataclass(frozen=True)
class TransferLimits:
    limits: dict[int, float]
    tight_zones: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "tight_zones", frozenset(self.tight_zones))
        missing = self.tight_zones - set(self.limits)
        if missing:
            raise BadParams(f"Transfer limits missing for tight zones {sorted(missing)}")
        if any(v < 0 for v in self.limits.values()):
            raise BadParams("Transfer limits must be nonnegative")

    def to_json(self) -> dict:
        return {"limits": {str(k): v for k, v in sorted(self.limits.items())}, "tight_zones": sorted(self.tight_zones)}

    @classmethod
    def from_json(cls, data: dict) -> TransferLimits:
        return cls({int(k): float(v) for k, v in data["limits"].items()}, frozenset(data["tight_zones"]))


@dataclass(frozen=True, eq=False)
class ScedSolution:
    dispatch: np.ndarray
    reserve: np.ndarray
    objective: float
    reserve_duals: np.ndarray  # mu_z, zone order
    transfer_duals: np.ndarray  # lambda_z, zone order (0 where no transfer rows)
    requirements: np.ndarray  # R_z^min
    status: LpStatus
    lp: LpSolution | None = None
    problem: LpProblem | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    @property
    def weights(self) -> np.ndarray:
        """Combined sensitivity weight (mu_z + lambda_z) per zone."""
        return self.reserve_duals + self.transfer_duals


def exposure_norms(L: CholeskyShape, system: ZonalSystem) -> np.ndarray:
    """||L^T A_z|| for every zone, zeroed below the direction tolerance."""
    norms = np.linalg.norm(system.allocation @ L.entries, axis=1)
    return np.where(norms < DIRECTION_TOL, 0.0, norms)


def reserve_requirement(L: CholeskyShape, rho: float, system: ZonalSystem, zone: int) -> float:
    return float(rho * exposure_norms(L, system)[system.zone_row(zone)])


def requirements(L: CholeskyShape, rho: float, system: ZonalSystem) -> np.ndarray:
    return rho * exposure_norms(L, system)


def build_decoupled(system: ZonalSystem, L: CholeskyShape, rho: float) -> LpProblem:
    return _build(system, requirements(L, rho, system), None)


def build_coupled(system: ZonalSystem, L: CholeskyShape, rho: float, tl: TransferLimits) -> LpProblem:
    return _build(system, requirements(L, rho, system), tl)


def _build(system: ZonalSystem, req: np.ndarray, tl: TransferLimits | None) -> LpProblem:
    G = system.n_generators
    gens = system.generators
    members = system.zone_members()
    eye = np.eye(G)

    cost = np.concatenate([[g.energy_cost for g in gens], [g.reserve_cost for g in gens]])
    eq_matrix = np.concatenate([np.ones(G), np.zeros(G)])[None, :]
    eq_rhs = [system.total_load]

    # g_i + r_i <= g_max_i
    rows = [np.hstack([eye, eye])]
    rhs = [np.array([g.g_max for g in gens])]
    tags: list[RowTag] = [OTHER] * G

    # -sum_{i in z} r_i <= -R_z
    rows.append(np.hstack([np.zeros_like(members), -members]))
    rhs.append(-req)
    tags += [RowTag(TagKind.RESERVE, z.id) for z in system.zones]

    if tl is not None:
        for k, z in enumerate(system.zones):
            if z.id not in tl.tight_zones:
                continue
            net = np.concatenate([members[k], np.zeros(G)])
            limit = tl.limits[z.id]
            rows += [net[None, :], -net[None, :]]
            rhs += [np.array([limit + z.load_mw - req[k]]), np.array([limit - z.load_mw - req[k]])]
            tags += [RowTag(TagKind.TRANSFER_UPPER, z.id), RowTag(TagKind.TRANSFER_LOWER, z.id)]

    lower = np.concatenate([[g.g_min for g in gens], np.zeros(G)])
    upper = np.full(2 * G, np.inf)
    return LpProblem(cost, eq_matrix, eq_rhs, np.vstack(rows), np.concatenate(rhs), lower, upper, tuple(tags))


def solution_from_lp(system: ZonalSystem, p: LpProblem, sol: LpSolution, req: np.ndarray) -> ScedSolution:
    G, Z = system.n_generators, system.n_zones
    mu = np.zeros(Z)
    lam = np.zeros(Z)
    if sol.optimal:
        for j, tag in enumerate(p.tags):
            if tag.zone is None:
                continue
            k = system.zone_row(tag.zone)
            # duals below solver noise are reported as exact zeros
            value = sol.duals_ub[j] if sol.duals_ub[j] > SCED_DUAL_TOL else 0.0
            if tag.kind is TagKind.RESERVE:
                mu[k] = value
            elif tag.kind in (TagKind.TRANSFER_UPPER, TagKind.TRANSFER_LOWER):
                lam[k] += value
    return ScedSolution(
        dispatch=sol.x[:G].copy(),
        reserve=sol.x[G:].copy(),
        objective=sol.objective,
        reserve_duals=mu,
        transfer_duals=lam,
        requirements=np.asarray(req, dtype=float),
        status=sol.status,
        lp=sol,
        problem=p,
    )


def solve_sced(system: ZonalSystem, L: CholeskyShape, rho: float, tl: TransferLimits | None = None) -> ScedSolution:
    p = build_decoupled(system, L, rho) if tl is None else build_coupled(system, L, rho, tl)
    req = requirements(L, rho, system)
    return solution_from_lp(system, p, solve_lp(p), req)


def zone_net_export(system: ZonalSystem, sol: ScedSolution) -> np.ndarray:
    return system.zone_members() @ sol.dispatch - np.array([z.load_mw for z in system.zones])


def compute_transfer_limits(
    system: ZonalSystem,
    L_base: CholeskyShape,
    rho_base: float,
    tight: Iterable[int],
    alpha_tight: float = 0.90,
    alpha_loose: float = 1.50,
) -> TransferLimits:
    base = solve_sced(system, L_base, rho_base)
    if not base.optimal:
        raise BaseInfeasible(f"Base decoupled SCED is {base.status.value} at rho={rho_base:.6g}")
    return _limits_from_base(system, base, frozenset(tight), alpha_tight, alpha_loose)


def _limits_from_base(
    system: ZonalSystem, base: ScedSolution, tight: frozenset[int], alpha_tight: float, alpha_loose: float
) -> TransferLimits:
    headroom = np.abs(zone_net_export(system, base)) + base.requirements
    limits = {
        z.id: float((alpha_tight if z.id in tight else alpha_loose) * headroom[k]) for k, z in enumerate(system.zones)
    }
    return TransferLimits(limits, tight)


def _price_order(system: ZonalSystem, sol: ScedSolution) -> list[int]:
    if not sol.optimal:
        raise NotOptimal("Tight-zone selection needs an optimal base solve")
    return sorted(range(system.n_zones), key=lambda row: (-sol.reserve_duals[row], row))


def select_tight_zones(system: ZonalSystem, sol: ScedSolution, k: int = 3) -> frozenset[int]:
    """The k zones with the highest reserve shadow prices (ties broken by zone order)."""
    return frozenset(system.zones[row].id for row in _price_order(system, sol)[:k])


def select_feasible_tight_zones(
    system: ZonalSystem,
    L_base: CholeskyShape,
    rho_base: float,
    k: int = 3,
    alpha_tight: float = 0.90,
    alpha_loose: float = 1.50,
) -> frozenset[int]:
    """Up to k zones, by descending reserve price, whose tightening keeps the coupled base solve feasible.

    A tight zone needs |net_z| + R_z <= alpha_tight * (|net_z^base| + R_z) at the base
    shape and radius, which fails when the base dispatch leaves the zone nearly
    balanced. Such zones are passed over for the next most expensive one.
    """
    base = solve_sced(system, L_base, rho_base)
    if not base.optimal:
        raise BaseInfeasible(f"Base decoupled SCED is {base.status.value} at rho={rho_base:.6g}")
    chosen: frozenset[int] = frozenset()
    for row in _price_order(system, base):
        if len(chosen) == k:
            break
        zone = system.zones[row].id
        candidate = chosen | {zone}
        tl = _limits_from_base(system, base, candidate, alpha_tight, alpha_loose)
        if solve_sced(system, L_base, rho_base, tl).optimal:
            chosen = candidate
        else:
            logger.warning("Tightening zone %d makes the base dispatch infeasible; skipped", zone)
    if len(chosen) < k:
        logger.warning("Only %d of %d tight zones are feasible at the base radius", len(chosen), k)
    return chosen


def envelope_grad_L(system: ZonalSystem, sol: ScedSolution, L: CholeskyShape, rho: float) -> ShapeGradient:
    if not sol.optimal:
        raise NotOptimal(f"Envelope gradient needs an optimal solve, status is {sol.status.value}")
    norms = exposure_norms(L, system)
    grad = np.zeros((L.dim, L.dim))
    for k, weight in enumerate(sol.weights):
        if weight == 0.0:
            continue
        if norms[k] <= DIRECTION_TOL:
            logger.warning("Zone %s has zero exposure under this shape; skipped in gradient", system.zones[k].id)
            continue
        grad += weight * grad_support_L(L, rho, system.allocation[k]).entries
    return ShapeGradient(grad)


def envelope_grad_rho(system: ZonalSystem, sol: ScedSolution, L: CholeskyShape) -> float:
    if not sol.optimal:
        raise NotOptimal(f"Envelope gradient needs an optimal solve, status is {sol.status.value}")
    return float(sol.weights @ exposure_norms(L, system))


def cost_decomposition(system: ZonalSystem, sol: ScedSolution) -> tuple[float, float]:
    """(energy, reserve) components of the dispatch cost."""
    energy = float(np.dot([g.energy_cost for g in system.generators], sol.dispatch))
    reserve = float(np.dot([g.reserve_cost for g in system.generators], sol.reserve))
    return energy, reserve
