"""Static shape training and contextual encoder training through the robust SCED."""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import torch

from .data import UncertaintyDataset, sample_covariance_shape, stream
from .encoder import DEFAULT_WIDTHS, MlpEncoder, init_from_static
from .errors import BadParams, DegenerateWeights, InfeasibleAtShape
from .geometry import DIAG_FLOOR, CholeskyShape, ShapeGradient, project_shape
from .lp import dual_degeneracy
from .quantile import (
    ConformalRadius,
    Kernel,
    SmoothedQuantile,
    conformal_radius,
    quantile_sensitivity,
    scores,
    smoothed_quantile,
)
from .sced import ScedSolution, TransferLimits, ZonalSystem, envelope_grad_L, envelope_grad_rho, solve_sced

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.95
    eps: float = 0.5
    iterations: int = 200
    step_size: float = 0.01
    grad_clip_norm: float = 10.0
    seed: int = 42
    kernel: str = "gaussian"
    trace_normalize: bool = True
    coupled: bool = False
    diag_floor: float = DIAG_FLOOR
    check_degeneracy: bool = True
    max_backoff: int = 4
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise BadParams(f"tau must lie in (0, 1), got {self.tau}")
        if self.eps <= 0:
            raise BadParams(f"eps must be positive, got {self.eps}")
        if self.iterations < 0:
            raise BadParams(f"iterations must be nonnegative, got {self.iterations}")
        if self.step_size <= 0 or self.grad_clip_norm <= 0:
            raise BadParams("step_size and grad_clip_norm must be positive")
        if self.max_backoff < 0:
            raise BadParams(f"max_backoff must be nonnegative, got {self.max_backoff}")
        Kernel(self.kernel)


@dataclass(frozen=True)
class ContextualConfig:
    enabled: bool = True
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    iterations: int = 1000
    batch_size: int = 8
    learning_rate: float = 3e-4
    max_grad_norm: float = 1.0
    patience: int = 400
    window: int = 100
    init_from_static: bool = True
    tau: float = 0.95
    eps: float = 0.5
    kernel: str = "gaussian"
    coupled: bool = False
    max_infeasible_fraction: float = 0.5
    seed: int = 42
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.batch_size < 1 or self.iterations < 0:
            raise BadParams("batch_size must be positive and iterations nonnegative")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0:
            raise BadParams("learning_rate and max_grad_norm must be positive")
        if not 0.0 < self.tau < 1.0 or self.eps <= 0:
            raise BadParams(f"Need tau in (0, 1) and eps > 0, got tau={self.tau}, eps={self.eps}")
        Kernel(self.kernel)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    rho_eps: float
    objective: float
    grad_norm: float
    clipped_norm: float
    degenerate: bool


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    stopped_early: bool = False

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        columns = ["iteration", "rho_eps", "objective", "grad_norm", "clipped_norm", "degenerate"]
        return pd.DataFrame([asdict(r) for r in self.records], columns=columns)


def trace_to_csv(trace: TrainTrace, path: Path) -> None:
    trace.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


class ProfiledStep(NamedTuple):
    grad: ShapeGradient
    rho_eps: float
    solution: ScedSolution


def _solve_or_raise(system, L, rho, tl, **where) -> ScedSolution:
    sol = solve_sced(system, L, rho, tl)
    if not sol.optimal:
        raise InfeasibleAtShape(f"Robust SCED is {sol.status.value} at rho={rho:.6g}", **where)
    return sol


def profiled_gradient(
    L: CholeskyShape,
    system: ZonalSystem,
    tune_us: np.ndarray,
    cfg: TrainConfig,
    tl: TransferLimits | None = None,
) -> ProfiledStep:
    """Envelope shape term plus radius sensitivity times quantile sensitivity."""
    if len(tune_us) == 0:
        raise BadParams("Tuning set is empty")
    sq = smoothed_quantile(scores(L, tune_us), cfg.tau, cfg.eps, cfg.kernel)
    sol = _solve_or_raise(system, L, sq.rho_eps, tl)
    grad = envelope_grad_L(system, sol, L, sq.rho_eps)
    g_rho = envelope_grad_rho(system, sol, L)
    if g_rho != 0.0:
        grad = grad + g_rho * quantile_sensitivity(L, tune_us, sq)
    return ProfiledStep(grad, sq.rho_eps, sol)


def clip(grad: ShapeGradient, max_norm: float) -> ShapeGradient:
    norm = grad.norm()
    return grad * (max_norm / norm) if norm > max_norm else grad


def initial_shape(ds: UncertaintyDataset, cfg: TrainConfig) -> CholeskyShape:
    base = sample_covariance_shape(ds.train.us)
    return project_shape(base.entries, cfg.diag_floor, cfg.trace_normalize)


def train_static(
    system: ZonalSystem,
    ds: UncertaintyDataset,
    cfg: TrainConfig,
    tl: TransferLimits | None = None,
    init: CholeskyShape | None = None,
) -> tuple[CholeskyShape, TrainTrace]:
    """Projected profiled-gradient descent on the static shape.

    A step that lands on an infeasible shape (possible under transfer coupling) is
    retried from the previous shape with the step halved, up to `cfg.max_backoff`
    times.
    """
    if cfg.coupled and tl is None:
        raise BadParams("Coupled training needs transfer limits")
    tl = tl if cfg.coupled else None
    L = init if init is not None else initial_shape(ds, cfg)
    tune_us = ds.tune.us
    trace = TrainTrace()
    last: tuple[CholeskyShape, ShapeGradient] | None = None

    for k in range(cfg.iterations):
        for attempt in range(cfg.max_backoff + 1):
            try:
                step = profiled_gradient(L, system, tune_us, cfg, tl)
                break
            except InfeasibleAtShape as err:
                if last is None or attempt == cfg.max_backoff:
                    raise InfeasibleAtShape(str(err), iteration=k) from err
                prev, direction = last
                shrink = 0.5 ** (attempt + 1)
                logger.warning("Iteration %d: shape infeasible, retrying with step x%.4g", k, shrink)
                L = _descend(prev, direction, shrink * cfg.step_size, cfg)
        clipped = clip(step.grad, cfg.grad_clip_norm)
        degenerate = False
        if cfg.check_degeneracy:
            degenerate = dual_degeneracy(step.solution.problem, step.solution.lp)
            if degenerate:
                logger.debug("Iteration %d: dual solution is degenerate", k)
        trace.append(
            TraceRecord(k, step.rho_eps, step.solution.objective, step.grad.norm(), clipped.norm(), degenerate)
        )
        if cfg.log_every and k % cfg.log_every == 0:
            logger.info(
                "static %4d  rho_eps=%.4f  V=%.2f  |g|=%.4g  |g_clip|=%.4g",
                k,
                step.rho_eps,
                step.solution.objective,
                step.grad.norm(),
                clipped.norm(),
            )
        last = (L, clipped)
        L = _descend(L, clipped, cfg.step_size, cfg)
    return L, trace


def _descend(L: CholeskyShape, grad: ShapeGradient, step_size: float, cfg: TrainConfig) -> CholeskyShape:
    return project_shape(L.entries - step_size * grad.entries, cfg.diag_floor, cfg.trace_normalize)


def calibrate(L: CholeskyShape, ds: UncertaintyDataset, tau: float) -> ConformalRadius:
    return conformal_radius(scores(L, ds.cal.us), tau)


# contextual training


def mixture_scores(factors: np.ndarray, us: np.ndarray) -> np.ndarray:
    """Per-sample gauge ||L_t^-1 u_t|| for stacked (n, d, d) factors."""
    V = torch.linalg.solve_triangular(torch.as_tensor(factors), torch.as_tensor(us)[..., None], upper=False)
    return torch.linalg.vector_norm(V[..., 0], dim=1).numpy()


def mixture_sensitivity(factors: np.ndarray, us: np.ndarray, sq: SmoothedQuantile) -> ShapeGradient:
    """Weighted mean of per-sample gauge gradients, each taken at its own factor."""
    Ls = torch.as_tensor(factors)
    V = torch.linalg.solve_triangular(Ls, torch.as_tensor(us)[..., None], upper=False)
    Y = torch.linalg.solve_triangular(Ls.transpose(1, 2), V, upper=True)
    s = torch.linalg.vector_norm(V[..., 0], dim=1).numpy()
    weights = np.where(s > 0, sq.weights, 0.0)
    total = weights.sum()
    if total <= 1e-300:
        raise DegenerateWeights(f"Kernel weights underflow at eps={sq.eps}")
    coef = torch.as_tensor(np.divide(weights, s, out=np.zeros_like(s), where=s > 0))
    G = -(coef[:, None, None] * (Y @ V.transpose(1, 2))).sum(dim=0).numpy()
    return ShapeGradient(G / total)


class _SampleResult(NamedTuple):
    grad: ShapeGradient | None
    objective: float


def _sample_gradient(system, L, rho, tl, sensitivity, index) -> _SampleResult:
    sol = solve_sced(system, L, rho, tl)
    if not sol.optimal:
        logger.warning("Sample %d: robust SCED is %s; skipped", index, sol.status.value)
        return _SampleResult(None, np.nan)
    grad = envelope_grad_L(system, sol, L, rho) + envelope_grad_rho(system, sol, L) * sensitivity
    return _SampleResult(grad, sol.objective)


def train_contextual(
    enc: MlpEncoder,
    system: ZonalSystem,
    ds: UncertaintyDataset,
    cfg: ContextualConfig,
    tl: TransferLimits | None = None,
    static_shape: CholeskyShape | None = None,
    threads: int = 1,
) -> tuple[MlpEncoder, TrainTrace]:
    if cfg.coupled and tl is None:
        raise BadParams("Coupled training needs transfer limits")
    tl = tl if cfg.coupled else None
    if cfg.init_from_static and static_shape is not None:
        init_from_static(enc, static_shape)

    train, tune = ds.train, ds.tune
    rng = stream(cfg.seed, "batches")
    optimizer = torch.optim.Adam(enc.parameters(), lr=cfg.learning_rate)
    tune_x = torch.as_tensor(tune.contexts)
    window: deque[float] = deque(maxlen=cfg.window)
    best, since_best = np.inf, 0
    trace = TrainTrace()

    with ThreadPoolExecutor(max_workers=threads) as pool:
        for k in range(cfg.iterations):
            with torch.no_grad():
                tune_factors = enc(tune_x).numpy()
            sq = smoothed_quantile(mixture_scores(tune_factors, tune.us), cfg.tau, cfg.eps, cfg.kernel)
            sensitivity = mixture_sensitivity(tune_factors, tune.us, sq)

            batch = rng.integers(0, len(train), size=cfg.batch_size)
            x = torch.as_tensor(train.contexts[batch])
            factors = enc(x)
            shapes = [project_shape(L) for L in factors.detach().numpy()]
            futures = [
                pool.submit(_sample_gradient, system, L, sq.rho_eps, tl, sensitivity, int(train.index[i]))
                for L, i in zip(shapes, batch, strict=True)
            ]
            results = [f.result() for f in futures]

            ok = [j for j, r in enumerate(results) if r.grad is not None]
            if len(ok) < (1.0 - cfg.max_infeasible_fraction) * len(results):
                raise InfeasibleAtShape(
                    f"{len(results) - len(ok)} of {len(results)} batch samples infeasible", iteration=k
                )
            upstream = torch.zeros_like(factors)
            for j in ok:
                upstream[j] = torch.as_tensor(results[j].grad.entries) / len(ok)

            # surrogate loss (1/B) sum_i <g_i, L_phi(xi_i)>
            optimizer.zero_grad()
            factors.backward(gradient=upstream)
            grad_norm = float(torch.nn.utils.clip_grad_norm_(enc.parameters(), cfg.max_grad_norm))
            optimizer.step()

            objective = float(np.mean([results[j].objective for j in ok]))
            trace.append(
                TraceRecord(k, sq.rho_eps, objective, grad_norm, min(grad_norm, cfg.max_grad_norm), False)
            )
            if cfg.log_every and k % cfg.log_every == 0:
                logger.info("contextual %4d  rho_eps=%.4f  V=%.2f  |grad|=%.4g", k, sq.rho_eps, objective, grad_norm)

            window.append(objective)
            if len(window) < cfg.window:
                continue
            moving = float(np.mean(window))
            if moving < best:
                best, since_best = moving, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    logger.info("Early stop at iteration %d (moving objective %.2f)", k, moving)
                    trace.stopped_early = True
                    break
    return enc, trace
