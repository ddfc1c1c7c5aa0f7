"""Hierarchical empirical-Bayes TSB forecasting for intermittent demand."""

from .baselines import ADIDA, IMAPA, SBA, TSB, Croston, SmoothingParams, tsb_grid_search
from .metrics import coverage_aiw, pinball_loss, point_metrics
from .model import TSBHB, ItemPosterior, PredictiveDistribution, shrinkage_report
from .occurrence import OccurrenceHyper, fit_occurrence, posterior_occurrence
from .panel import (
    DemandSeries,
    Panel,
    SeriesStats,
    SplitSpec,
    compute_stats,
    load_panel,
    preprocess,
    split_fixed_origin,
)
from .segmentation import classify
from .simulate import SyntheticSpec, generate_panel
from .size import GammaSizeHyper, SizeHyper, fit_size_gamma, fit_size_reml

__version__ = "0.1.0"

__all__ = [
    "TSBHB",
    "Croston",
    "SBA",
    "TSB",
    "ADIDA",
    "IMAPA",
    "SmoothingParams",
    "tsb_grid_search",
    "DemandSeries",
    "Panel",
    "SeriesStats",
    "SplitSpec",
    "compute_stats",
    "load_panel",
    "preprocess",
    "split_fixed_origin",
    "OccurrenceHyper",
    "fit_occurrence",
    "posterior_occurrence",
    "SizeHyper",
    "GammaSizeHyper",
    "fit_size_reml",
    "fit_size_gamma",
    "ItemPosterior",
    "PredictiveDistribution",
    "shrinkage_report",
    "point_metrics",
    "pinball_loss",
    "coverage_aiw",
    "classify",
    "SyntheticSpec",
    "generate_panel",
]
