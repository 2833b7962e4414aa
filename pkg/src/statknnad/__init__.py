"""Selective inference for k-nearest-neighbor anomaly detection."""

from .exceptions import (
    ConfigError,
    DataError,
    DimensionError,
    InvariantViolation,
    NotACandidateError,
    NumericalError,
    StatKNNADError,
)
from .inference import (
    Method,
    PValueReport,
    analyze,
    bonferroni_p,
    naive_p,
    selective_p,
    tn_survival,
    wopp_p,
)
from .knnad import ScreeningConfig, ScreeningResult, anomaly_score, choose_theta, rank_neighbors, screen
from .model import Dataset, StatKind, build_eta, concat, line_params
from .truncation import IntervalUnion, compute_Z

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "DimensionError",
    "IntervalUnion",
    "InvariantViolation",
    "Method",
    "NotACandidateError",
    "NumericalError",
    "PValueReport",
    "ScreeningConfig",
    "ScreeningResult",
    "StatKNNADError",
    "StatKind",
    "analyze",
    "anomaly_score",
    "bonferroni_p",
    "build_eta",
    "choose_theta",
    "compute_Z",
    "concat",
    "line_params",
    "naive_p",
    "rank_neighbors",
    "screen",
    "selective_p",
    "tn_survival",
    "wopp_p",
]
