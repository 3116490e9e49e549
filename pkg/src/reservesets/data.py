"""Synthetic zonal system, contexts and context-dependent VAR(1) forecast errors.

Random draws come from counter-based Philox streams keyed by (seed, purpose), so
each purpose (prices, allocation, contexts, innovations, ...) has its own
independent sequence and adding draws for one never shifts another.

Uncertainty vectors have d = 15 components laid out type-major: load for regions
1-5, then solar for regions 1-5, then wind for regions 1-5. Context feature
vectors have 19 components: hour_sin, hour_cos, month_sin, month_cos, then the
15 normalized forecasts in the same type-major order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import BadParams, NotPSD
from .geometry import CholeskyShape, cholesky_factor
from .sced import Generator, Zone, ZonalSystem

logger = logging.getLogger(__name__)

N_REGIONS = 5
SOURCE_TYPES = ("load", "solar", "wind")
DIM = len(SOURCE_TYPES) * N_REGIONS
N_FEATURES = 4 + DIM
HOURS_PER_YEAR = 8760
SOLAR_NIGHT_FLOOR = 1e-3
PSD_CHECK_CONTEXTS = 1000
DEFAULT_FRACTIONS = (0.60, 0.20, 0.10, 0.10)
SPLIT_NAMES = ("train", "tune", "cal", "test")
# a 8192-hour run with default fractions puts the calibration/test boundary on day 0
DEFAULT_START_DAY = 58

# Ten-zone aggregation: (load MW, generation cap MW)
TABLE_ZONES = (
    (423.0, 550.0),
    (412.0, 520.0),
    (445.0, 580.0),
    (398.0, 490.0),
    (467.0, 610.0),
    (389.0, 480.0),
    (456.0, 590.0),
    (401.0, 510.0),
    (478.0, 620.0),
    (373.0, 550.0),
)
GENERATORS_PER_ZONE = (6, 6, 6, 6, 5, 5, 5, 5, 5, 5)
ENERGY_COST_RANGE = (15.0, 45.0)
RESERVE_COST_RANGE = (1.0, 8.0)

PURPOSES = {
    "prices": 1,
    "allocation": 2,
    "contexts": 3,
    "innovations": 4,
    "iid": 5,
    "batches": 6,
    "bootstrap": 7,
    "encoder": 8,
    "psd_check": 9,
    "selftest": 10,
}

FEATURE_NAMES = (
    "hour_sin",
    "hour_cos",
    "month_sin",
    "month_cos",
    *(f"{kind}_{r + 1}" for kind in SOURCE_TYPES for r in range(N_REGIONS)),
)
U_NAMES = tuple(f"u{j + 1}" for j in range(DIM))


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream for one purpose under one seed."""
    if purpose not in PURPOSES:
        raise BadParams(f"Unknown random stream purpose '{purpose}'")
    if seed < 0:
        raise BadParams(f"Seed must be nonnegative, got {seed}")
    key = np.array([seed, PURPOSES[purpose]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Context:
    hour_sin: float
    hour_cos: float
    month_sin: float
    month_cos: float
    load_forecast: tuple[float, ...]
    solar_forecast: tuple[float, ...]
    wind_forecast: tuple[float, ...]

    def __post_init__(self):
        for name, (s, c) in {"hour": (self.hour_sin, self.hour_cos), "month": (self.month_sin, self.month_cos)}.items():
            if abs(s * s + c * c - 1.0) > 1e-9:
                raise BadParams(f"Context {name} encoding is not on the unit circle: ({s}, {c})")
        for name in ("load_forecast", "solar_forecast", "wind_forecast"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != N_REGIONS:
                raise BadParams(f"Context {name} needs {N_REGIONS} regions, got {len(values)}")
            object.__setattr__(self, name, values)

    @property
    def hour(self) -> int:
        return int(round(np.arctan2(self.hour_sin, self.hour_cos) * 24 / (2 * np.pi))) % 24

    def features(self) -> np.ndarray:
        return np.array(
            [self.hour_sin, self.hour_cos, self.month_sin, self.month_cos]
            + list(self.load_forecast)
            + list(self.solar_forecast)
            + list(self.wind_forecast)
        )

    @classmethod
    def from_features(cls, x: np.ndarray) -> Context:
        x = np.asarray(x, dtype=float)
        if x.shape != (N_FEATURES,):
            raise BadParams(f"Context feature vector must have {N_FEATURES} entries, got {x.shape}")
        r = N_REGIONS
        return cls(*map(float, x[:4]), tuple(x[4 : 4 + r]), tuple(x[4 + r : 4 + 2 * r]), tuple(x[4 + 2 * r :]))


@dataclass(frozen=True)
class GeneratorParams:
    """Parameters of the context-dependent VAR(1) forecast-error model."""

    ar_coeff: float = 0.6
    load_scale: float = 15.0
    solar_scale: float = 12.0
    wind_scale: float = 20.0
    regional_corr: float = 0.4
    type_blend: float = 0.3
    context_noise: float = 0.05
    start_day: int = DEFAULT_START_DAY
    seed: int = 42

    def __post_init__(self):
        if not 0.0 <= self.ar_coeff < 1.0:
            raise BadParams(f"ar_coeff must lie in [0, 1) for a stationary VAR, got {self.ar_coeff}")
        for name in ("load_scale", "solar_scale", "wind_scale"):
            if getattr(self, name) <= 0:
                raise BadParams(f"{name} must be positive, got {getattr(self, name)}")
        if self.context_noise < 0:
            raise BadParams(f"context_noise must be nonnegative, got {self.context_noise}")
        if not 0 <= self.start_day < 365:
            raise BadParams(f"start_day must lie in [0, 365), got {self.start_day}")
        try:
            cholesky_factor(correlation(self))
            sampled = contexts(self, PSD_CHECK_CONTEXTS, purpose="psd_check")
            np.linalg.cholesky(sigmas(self, sampled))
        except (NotPSD, np.linalg.LinAlgError) as err:
            raise BadParams(f"Implied covariance is not positive definite: {err}") from err


def correlation(params: GeneratorParams) -> np.ndarray:
    """Type-by-region Kronecker blend of equicorrelation matrices."""
    n_types = len(SOURCE_TYPES)
    R_type = (1 - params.type_blend) * np.eye(n_types) + params.type_blend * np.ones((n_types, n_types))
    R_reg = (1 - params.regional_corr) * np.eye(N_REGIONS) + params.regional_corr * np.ones((N_REGIONS, N_REGIONS))
    return np.kron(R_type, R_reg)


def _daylight(hour: np.ndarray) -> np.ndarray:
    return np.clip(np.sin(np.pi * (hour - 6) / 12), 0.0, None)


def scales(params: GeneratorParams, X: np.ndarray) -> np.ndarray:
    """Per-component standard deviations D(xi) for an (n, 19) feature array."""
    X = np.atleast_2d(X)
    r = N_REGIONS
    hour = np.mod(np.round(np.arctan2(X[:, 0], X[:, 1]) * 24 / (2 * np.pi)), 24)
    mask = (_daylight(hour) > 0).astype(float)[:, None]
    load = params.load_scale * (0.5 + X[:, 4 : 4 + r])
    solar = params.solar_scale * np.maximum(mask * X[:, 4 + r : 4 + 2 * r], SOLAR_NIGHT_FLOOR)
    wind = params.wind_scale * (0.3 + X[:, 4 + 2 * r :])
    return np.hstack([load, solar, wind])


def sigmas(params: GeneratorParams, X: np.ndarray) -> np.ndarray:
    D = scales(params, X)
    return D[:, :, None] * correlation(params)[None] * D[:, None, :]


def sigma(params: GeneratorParams, ctx: Context) -> np.ndarray:
    return sigmas(params, ctx.features())[0]


def true_shape(params: GeneratorParams, ctx: Context) -> CholeskyShape:
    return cholesky_factor(sigma(params, ctx))


def contexts(params: GeneratorParams, n_hours: int, purpose: str = "contexts", start: int = 0) -> np.ndarray:
    """(n_hours, 19) feature array: daily and seasonal profiles plus seeded noise.

    Hour 0 falls on day `params.start_day` of the synthetic year. The seasonal
    profile peaks in winter (day 0), so windows placed symmetrically about it see
    the same mix of forecast levels.
    """
    rng = stream(params.seed, purpose)
    t = np.arange(start, start + n_hours) + 24 * params.start_day
    hour = t % 24
    doy = (t // 24) % 365
    month = np.floor(doy * 12 / 365)
    season = np.cos(2 * np.pi * doy / 365)  # +1 in winter, -1 in summer
    r = np.arange(N_REGIONS)
    noise = params.context_noise

    hour_angle = 2 * np.pi * hour / 24
    month_angle = 2 * np.pi * month / 12
    trig = np.column_stack([np.sin(hour_angle), np.cos(hour_angle), np.sin(month_angle), np.cos(month_angle)])

    daily = np.sin(2 * np.pi * (hour - 8) / 24)[:, None]
    load = 0.55 + 0.2 * daily + 0.1 * season[:, None] + 0.04 * (r - 2) / 2
    load = load + noise * rng.standard_normal((n_hours, N_REGIONS))

    daylight = _daylight(hour)[:, None]
    solar = daylight * (0.6 - 0.25 * season[:, None] + 0.05 * (2 - r) / 2)
    solar = daylight * (solar + noise * rng.standard_normal((n_hours, N_REGIONS)))

    wind = 0.45 + 0.2 * season[:, None] + 0.1 * np.sin(1.0 + r)
    wind = wind + 2 * noise * rng.standard_normal((n_hours, N_REGIONS))

    return np.hstack([trig, np.clip(load, 0, 1), np.clip(solar, 0, 1), np.clip(wind, 0, 1)])


@dataclass(frozen=True, eq=False)
class Split:
    name: str
    index: np.ndarray
    contexts: np.ndarray
    us: np.ndarray

    def __len__(self) -> int:
        return self.index.size


@dataclass(frozen=True, eq=False)
class UncertaintyDataset:
    contexts: np.ndarray  # (n, 19)
    us: np.ndarray  # (n, d)
    params: GeneratorParams
    boundaries: tuple[int, int, int] = field(default=(0, 0, 0))

    def __post_init__(self):
        n = self.us.shape[0]
        if self.contexts.shape != (n, N_FEATURES) or self.us.shape != (n, DIM):
            raise BadParams(f"Dataset arrays have inconsistent shapes {self.contexts.shape}, {self.us.shape}")
        if not 0 < self.boundaries[0] < self.boundaries[1] < self.boundaries[2] < n:
            raise BadParams(f"Split boundaries {self.boundaries} must be strictly increasing inside (0, {n})")
        for a in (self.contexts, self.us):
            a.setflags(write=False)

    @property
    def n_hours(self) -> int:
        return self.us.shape[0]

    def split(self, name: str) -> Split:
        edges = (0, *self.boundaries, self.n_hours)
        k = SPLIT_NAMES.index(name)
        lo, hi = edges[k], edges[k + 1]
        return Split(name, np.arange(lo, hi), self.contexts[lo:hi], self.us[lo:hi])

    @property
    def train(self) -> Split:
        return self.split("train")

    @property
    def tune(self) -> Split:
        return self.split("tune")

    @property
    def cal(self) -> Split:
        return self.split("cal")

    @property
    def test(self) -> Split:
        return self.split("test")

    def context(self, t: int) -> Context:
        return Context.from_features(self.contexts[t])


def split_boundaries(n_hours: int, fractions: tuple[float, ...] = DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    if len(fractions) != 4 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadParams(f"Split fractions must be four positive numbers summing to 1, got {fractions}")
    cumulative = np.cumsum(fractions)[:3]
    return tuple(int(round(c * n_hours)) for c in cumulative)


def _var_recursion(params: GeneratorParams, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # chol(D C D) = D chol(C) for positive diagonal D
    L_corr = np.linalg.cholesky(correlation(params))
    D = scales(params, X)
    e = rng.standard_normal(D.shape)
    shocks = D * (e @ L_corr.T)
    us = np.empty_like(shocks)
    prev = np.zeros(DIM)
    for t in range(shocks.shape[0]):
        prev = params.ar_coeff * prev + shocks[t]
        us[t] = prev
    return us


def generate(
    params: GeneratorParams, n_hours: int, fractions: tuple[float, ...] = DEFAULT_FRACTIONS
) -> UncertaintyDataset:
    if n_hours < 48:
        raise BadParams(f"n_hours must be at least 48, got {n_hours}")
    X = contexts(params, n_hours)
    us = _var_recursion(params, X, stream(params.seed, "innovations"))
    logger.debug("Generated %d hours of d=%d forecast errors", n_hours, DIM)
    return UncertaintyDataset(X, us, params, split_boundaries(n_hours, fractions))


def constant_context_dataset(
    params: GeneratorParams, n_hours: int, ctx: Context, fractions: tuple[float, ...] = DEFAULT_FRACTIONS
) -> UncertaintyDataset:
    X = np.tile(ctx.features(), (n_hours, 1))
    us = _var_recursion(params, X, stream(params.seed, "innovations"))
    return UncertaintyDataset(X, us, params, split_boundaries(n_hours, fractions))


def sample_iid(params: GeneratorParams, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n independent (context, u) pairs: a uniformly drawn hour of the year, no autoregression."""
    pool = contexts(params, HOURS_PER_YEAR)
    X = pool[rng.integers(0, HOURS_PER_YEAR, size=n)]
    L_corr = np.linalg.cholesky(correlation(params))
    us = scales(params, X) * (rng.standard_normal((n, DIM)) @ L_corr.T)
    return X, us


def _covariance(us: np.ndarray) -> np.ndarray:
    us = np.asarray(us, dtype=float)
    if us.shape[0] < us.shape[1] + 1:
        raise BadParams(f"Need at least d+1 = {us.shape[1] + 1} samples for a covariance, got {us.shape[0]}")
    return np.cov(us, rowvar=False, bias=True)


def sample_covariance_shape(us: np.ndarray) -> CholeskyShape:
    return cholesky_factor(_covariance(us))


def independent_shape(us: np.ndarray) -> CholeskyShape:
    return cholesky_factor(np.diag(np.diag(_covariance(us))))


def default_allocation(seed: int) -> np.ndarray:
    """10 x 15 exposure matrix: region r's sources are shared by zones 2r+1 and 2r+2."""
    rng = stream(seed, "allocation")
    loads = np.array([z[0] for z in TABLE_ZONES])
    A = np.zeros((len(TABLE_ZONES), DIM))
    for region in range(N_REGIONS):
        zones = [2 * region, 2 * region + 1]
        for k in range(len(SOURCE_TYPES)):
            footprint = rng.uniform(0.8, 1.2, size=2)
            w = loads[zones] * footprint
            A[zones, k * N_REGIONS + region] = w / w.sum()
    return A


def default_system(seed: int) -> ZonalSystem:
    rng = stream(seed, "prices")
    zones = tuple(Zone(id=k + 1, load_mw=load) for k, (load, _) in enumerate(TABLE_ZONES))
    generators = []
    for k, ((_, cap), count) in enumerate(zip(TABLE_ZONES, GENERATORS_PER_ZONE, strict=True)):
        w = rng.uniform(0.5, 1.5, size=count)
        caps = cap * w / w.sum()
        energy = rng.uniform(*ENERGY_COST_RANGE, size=count)
        reserve = rng.uniform(*RESERVE_COST_RANGE, size=count)
        for i in range(count):
            generators.append(Generator(k + 1, 0.0, float(caps[i]), float(energy[i]), float(reserve[i])))
    return ZonalSystem(zones, tuple(generators), default_allocation(seed))


DATASET_CSV = "dataset.csv"
DATASET_JSON = "dataset.json"


def save_dataset(ds: UncertaintyDataset, directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.hstack([ds.contexts, ds.us]), columns=[*FEATURE_NAMES, *U_NAMES])
    frame.index.name = "hour"
    csv_path = directory / DATASET_CSV
    frame.to_csv(csv_path, float_format="%.17g", lineterminator="\n")
    sidecar = {"n_hours": ds.n_hours, "boundaries": list(ds.boundaries), "params": asdict(ds.params)}
    json_path = directory / DATASET_JSON
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return [csv_path, json_path]


def load_dataset(directory: Path) -> UncertaintyDataset:
    directory = Path(directory)
    sidecar = json.loads((directory / DATASET_JSON).read_text())
    frame = pd.read_csv(directory / DATASET_CSV, index_col="hour", float_precision="round_trip")
    if list(frame.columns) != [*FEATURE_NAMES, *U_NAMES] or len(frame) != sidecar["n_hours"]:
        raise BadParams(f"{directory / DATASET_CSV} does not match its sidecar")
    values = frame.to_numpy(dtype=float)
    return UncertaintyDataset(
        values[:, :N_FEATURES].copy(),
        values[:, N_FEATURES:].copy(),
        GeneratorParams(**sidecar["params"]),
        tuple(sidecar["boundaries"]),
    )
