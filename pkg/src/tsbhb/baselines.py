"""Classical intermittent-demand baselines.

Croston, SBA, TSB, ADIDA and IMAPA in their textbook single-series form,
plus panel-level estimator wrappers with the same ``fit``/``predict`` surface
as :class:`tsbhb.TSBHB`. All forecasts are flat over the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_horizon, check_panel, check_series, check_smoothing
from .panel import Panel

__all__ = [
    "SmoothingParams",
    "NoDemandError",
    "croston",
    "sba",
    "tsb",
    "ses",
    "adida",
    "imapa",
    "mean_interval",
    "naive_insample_scale",
    "tsb_grid_search",
    "DEFAULT_GRID",
    "Croston",
    "SBA",
    "TSB",
    "ADIDA",
    "IMAPA",
]


class NoDemandError(ValueError):
    """The in-sample window has no positive demand."""


@dataclass(frozen=True)
class SmoothingParams:
    alpha_d: float
    alpha_p: float

    def __post_init__(self):
        check_smoothing(self.alpha_d, "alpha_d")
        check_smoothing(self.alpha_p, "alpha_p")


_STEPS = np.round(np.arange(1, 11) * 0.05, 2)
DEFAULT_GRID = tuple(SmoothingParams(float(d), float(p)) for d, p in product(_STEPS, _STEPS))


def _positive_positions(y: np.ndarray) -> np.ndarray:
    pos = np.flatnonzero(y > 0) + 1  # 1-based period numbers
    if pos.size == 0:
        raise NoDemandError("no positive demand in the in-sample window")
    return pos


def croston(y, alpha: float = 0.1) -> float:
    """Croston's ratio of smoothed size to smoothed inter-demand interval.

    Both smoothers start at the first positive demand: the size at its
    value and the interval at its (1-based) position.
    """
    y = check_series(y)
    alpha = check_smoothing(alpha, "alpha")
    pos = _positive_positions(y)
    z = y[pos[0] - 1]
    interval = float(pos[0])
    for prev, cur in zip(pos[:-1], pos[1:]):
        z += alpha * (y[cur - 1] - z)
        interval += alpha * ((cur - prev) - interval)
    return float(z / interval)


def sba(y, alpha: float = 0.1) -> float:
    return (1.0 - alpha / 2.0) * croston(y, alpha)


def tsb(y, alpha_d, alpha_p, *, p0=None, z0=None):
    """Teunter-Syntetos-Babai forecast ``p * z`` after the last period.

    ``alpha_d`` and ``alpha_p`` may be arrays of equal shape, in which case
    one forecast per pair is returned. By default ``p0`` is the in-sample
    occurrence frequency and ``z0`` the mean positive size (the overall
    mean when there is none).
    """
    y = check_series(y)
    ad = np.asarray(alpha_d, dtype=float)
    ap = np.asarray(alpha_p, dtype=float)
    if np.any((ad <= 0) | (ad > 1)) or np.any((ap <= 0) | (ap > 1)):
        raise ValueError("smoothing constants must lie in (0, 1]")
    pos = y[y > 0]
    if p0 is None:
        p0 = pos.size / y.size
    if z0 is None:
        z0 = pos.mean() if pos.size else y.mean()
    p = np.broadcast_to(np.asarray(p0, dtype=float), np.broadcast(ad, ap).shape).copy()
    z = np.broadcast_to(np.asarray(z0, dtype=float), p.shape).copy()
    for v in y:
        if v > 0:
            p += ap * (1.0 - p)
            z += ad * (v - z)
        else:
            p -= ap * p
    out = p * z
    return float(out) if out.ndim == 0 else out


def _tsb_block(Y: np.ndarray, ad: np.ndarray, ap: np.ndarray) -> np.ndarray:
    """TSB for equal-length series ``Y`` (N, T) and grid (G,) -> (N, G)."""
    occ = Y > 0
    m = occ.sum(axis=1)
    p0 = m / Y.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        z0 = np.where(m > 0, np.where(occ, Y, 0.0).sum(axis=1) / np.maximum(m, 1), Y.mean(axis=1))
    p = np.repeat(p0[:, None], ad.size, axis=1)
    z = np.repeat(z0[:, None], ad.size, axis=1)
    for t in range(Y.shape[1]):
        hit = occ[:, t][:, None]
        p = p + ap[None, :] * (hit - p)
        z = np.where(hit, z + ad[None, :] * (Y[:, t][:, None] - z), z)
    return p * z


def ses(y, alpha: float = 0.1) -> float:
    """Simple exponential smoothing level, initialised at the first value."""
    y = check_series(y)
    level = y[0]
    for v in y[1:]:
        level += alpha * (v - level)
    return float(level)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def mean_interval(y) -> float:
    """Mean gap between positive demands, the first gap counted from t=0."""
    pos = _positive_positions(check_series(y))
    return float(np.diff(np.concatenate(([0], pos))).mean())


def adida(y, agg_window: Optional[int] = None, alpha: float = 0.1) -> float:
    """Aggregate-disaggregate forecast.

    Demand is summed into trailing non-overlapping buckets (the oldest
    incomplete bucket is dropped), the bucket series is smoothed by SES, and
    the smoothed bucket total is spread evenly over the bucket's periods.
    """
    y = check_series(y)
    n = y.size
    if agg_window is None:
        agg_window = _round_half_up(mean_interval(y))
    else:
        _positive_positions(y)
    k = int(min(max(int(agg_window), 1), n))
    n_b = n // k
    buckets = y[n - n_b * k:].reshape(n_b, k).sum(axis=1)
    return ses(buckets, alpha) / k


def imapa(y, levels: Optional[Iterable[int]] = None, alpha: float = 0.1) -> float:
    """Equal-weight mean of ADIDA forecasts over several aggregation levels."""
    y = check_series(y)
    if levels is None:
        top = max(_round_half_up(mean_interval(y)), 1)
        levels = range(1, top + 1)
    levels = sorted(set(int(k) for k in levels))
    if not levels:
        raise ValueError("levels must be nonempty")
    return float(np.mean([adida(y, k, alpha) for k in levels]))


def naive_insample_scale(y) -> Optional[float]:
    """RMSE of the one-step naive forecast in sample; None if it is zero."""
    y = check_series(y, min_length=2, name="in-sample window")
    scale = float(np.sqrt(np.mean(np.diff(y) ** 2)))
    return scale if scale > 0 else None


# -------------------------------------------------------------- grid search


def _groups_by_length(panel: Panel):
    groups: dict = {}
    for k, s in enumerate(panel):
        groups.setdefault(len(s), []).append(k)
    return groups


def tsb_panel_forecasts(panel_in: Panel, grid: Sequence[SmoothingParams]) -> np.ndarray:
    """TSB forecasts for every series and grid point, shape (N, G)."""
    ad = np.array([g.alpha_d for g in grid], dtype=float)
    ap = np.array([g.alpha_p for g in grid], dtype=float)
    out = np.empty((len(panel_in), ad.size))
    series = panel_in.series
    for _, rows in sorted(_groups_by_length(panel_in).items()):
        Y = np.stack([series[k].values for k in rows])
        out[rows] = _tsb_block(Y, ad, ap)
    return out


def tsb_grid_search(panel_in: Panel, validation: Panel,
                    grid: Optional[Sequence[SmoothingParams]] = None):
    """Pick the TSB smoothing pair with the lowest pooled validation MAE.

    Forecasts are produced from ``panel_in`` and scored on the matching
    series of ``validation``. Ties go to the smaller ``alpha_d``, then the
    smaller ``alpha_p``.

    Returns
    -------
    best : SmoothingParams
    audit : pandas.DataFrame
        One row per grid point with columns ``alpha_d, alpha_p, mae``.
    """
    grid = list(DEFAULT_GRID if grid is None else grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    F = tsb_panel_forecasts(panel_in, grid)
    abs_err = np.zeros(len(grid))
    count = 0
    for k, s in enumerate(panel_in):
        v = validation[s.id].values
        abs_err += np.abs(v[None, :] - F[k][:, None]).sum(axis=1)
        count += v.size
    mae = abs_err / max(count, 1)
    audit = pd.DataFrame(
        {
            "alpha_d": [g.alpha_d for g in grid],
            "alpha_p": [g.alpha_p for g in grid],
            "mae": mae,
        }
    )
    order = audit.sort_values(["mae", "alpha_d", "alpha_p"], kind="mergesort").index
    return grid[int(order[0])], audit


# --------------------------------------------------------------- estimators


class _PanelBaseline(BaseEstimator):
    """Fits one flat forecast per series; all-zero series forecast 0."""

    def _forecast_one(self, y: np.ndarray) -> float:  # pragma: no cover
        raise NotImplementedError

    def fit(self, X, y=None):
        panel = check_panel(X)
        self.ids_ = panel.ids
        self.flagged_ids_ = []
        out = np.empty(len(panel))
        for k, s in enumerate(panel):
            try:
                out[k] = self._forecast_one(s.values)
            except NoDemandError:
                out[k] = 0.0
                self.flagged_ids_.append(s.id)
        self.y_hat_ = out
        self._rows = {sid: k for k, sid in enumerate(self.ids_)}
        return self

    def predict(self, X=None, horizon: int = 1) -> np.ndarray:
        check_is_fitted(self, "y_hat_")
        horizon = check_horizon(horizon)
        if X is None:
            rows = np.arange(len(self.ids_))
        else:
            ids = X.ids if isinstance(X, Panel) else X
            rows = np.array([self._rows[i] for i in ids], dtype=np.int64)
        return np.repeat(self.y_hat_[rows, None], horizon, axis=1)


class Croston(_PanelBaseline):
    def __init__(self, alpha=0.1):
        self.alpha = alpha

    def _forecast_one(self, y):
        return croston(y, self.alpha)


class SBA(_PanelBaseline):
    def __init__(self, alpha=0.1):
        self.alpha = alpha

    def _forecast_one(self, y):
        return sba(y, self.alpha)


class TSB(_PanelBaseline):
    """TSB with fixed smoothing constants; see :func:`tsb_grid_search`."""

    def __init__(self, alpha_d=0.1, alpha_p=0.1):
        self.alpha_d = alpha_d
        self.alpha_p = alpha_p

    def fit(self, X, y=None):
        params = SmoothingParams(self.alpha_d, self.alpha_p)
        panel = check_panel(X)
        self.ids_ = panel.ids
        self.flagged_ids_ = []
        self.y_hat_ = tsb_panel_forecasts(panel, [params])[:, 0]
        self._rows = {sid: k for k, sid in enumerate(self.ids_)}
        return self


class ADIDA(_PanelBaseline):
    def __init__(self, agg_window=None, alpha=0.1):
        self.agg_window = agg_window
        self.alpha = alpha

    def _forecast_one(self, y):
        return adida(y, self.agg_window, self.alpha)


class IMAPA(_PanelBaseline):
    def __init__(self, levels=None, alpha=0.1):
        self.levels = levels
        self.alpha = alpha

    def _forecast_one(self, y):
        return imapa(y, self.levels, self.alpha)
