"""reservesets - learned ellipsoidal uncertainty sets for zonal reserve procurement."""

from .geometry import CholeskyShape, ShapeGradient, gauge, project_shape, support
from .quantile import conformal_radius, smoothed_quantile
from .sced import TransferLimits, ZonalSystem, solve_sced
from .train import TrainConfig, calibrate, profiled_gradient, train_static

__all__ = [
    "CholeskyShape",
    "ShapeGradient",
    "gauge",
    "support",
    "project_shape",
    "ZonalSystem",
    "TransferLimits",
    "solve_sced",
    "smoothed_quantile",
    "conformal_radius",
    "TrainConfig",
    "profiled_gradient",
    "train_static",
    "calibrate",
]
__version__ = "0.1.0"
