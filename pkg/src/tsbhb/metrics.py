"""Point and probabilistic forecast metrics.

Sign convention: errors are ``forecast - actual``, so a negative ME means
the forecasts sit below the actuals on average.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ._validation import check_consistent_length, check_quantile

__all__ = [
    "PointMetrics",
    "ProbMetrics",
    "SeriesEval",
    "point_metrics",
    "pinball_loss",
    "mean_pinball",
    "coverage_aiw",
    "aggregate",
    "DEFAULT_QUANTILES",
]

DEFAULT_QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)


@dataclass(frozen=True)
class PointMetrics:
    me: float
    mae: float
    rmse: float
    rmsse: Optional[float] = None


@dataclass(frozen=True)
class ProbMetrics:
    pinball: Mapping[float, float]
    mean_pinball: float
    coverage: float
    aiw: float


def point_metrics(actuals, forecasts, scale: Optional[float] = None) -> PointMetrics:
    y, f = check_consistent_length(actuals, forecasts)
    if scale is not None and not scale > 0:
        raise ValueError(f"scale must be positive when given, got {scale}")
    e = f - y
    rmse = float(np.sqrt(np.mean(e * e)))
    return PointMetrics(
        me=float(np.mean(e)),
        mae=float(np.mean(np.abs(e))),
        rmse=rmse,
        rmsse=rmse / scale if scale is not None else None,
    )


def pinball_loss(actual, q_forecast, q: float):
    """Quantile (pinball) loss; elementwise for arrays."""
    q = check_quantile(q)
    y = np.asarray(actual, dtype=float)
    f = np.asarray(q_forecast, dtype=float)
    diff = y - f
    out = np.where(diff >= 0, q * diff, (1.0 - q) * (-diff))
    return float(out) if out.ndim == 0 else out


def mean_pinball(actuals, q_forecasts: Mapping[float, Sequence[float]]) -> dict:
    """Average pinball loss per quantile over all points."""
    y = np.asarray(actuals, dtype=float).ravel()
    out = {}
    for q, f in q_forecasts.items():
        (f_,) = check_consistent_length(f)
        if f_.size != y.size:
            raise ValueError("length mismatch between actuals and quantile forecasts")
        out[q] = float(np.mean(pinball_loss(y, f_, q)))
    return out


def coverage_aiw(actuals, lo, hi):
    """Fraction of actuals inside the closed intervals, and mean width."""
    y, lo, hi = check_consistent_length(actuals, lo, hi)
    if np.any(lo > hi):
        raise ValueError("interval lower bound exceeds upper bound")
    inside = (lo <= y) & (y <= hi)
    return float(inside.mean()), float(np.mean(hi - lo))


@dataclass
class SeriesEval:
    """Out-of-sample actuals and forecasts of one series for one model."""

    id: str
    actuals: np.ndarray
    forecasts: np.ndarray
    scale: Optional[float] = None
    quantiles: Mapping[float, np.ndarray] = field(default_factory=dict)
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def point(self) -> PointMetrics:
        return point_metrics(self.actuals, self.forecasts, self.scale)

    def prob(self) -> Optional[ProbMetrics]:
        if not self.quantiles or self.lo is None:
            return None
        pin = mean_pinball(self.actuals, self.quantiles)
        cov, aiw = coverage_aiw(self.actuals, self.lo, self.hi)
        return ProbMetrics(pin, float(np.mean(list(pin.values()))), cov, aiw)


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(per_series: Sequence[SeriesEval], weights: str = "per_point") -> dict:
    """Panel-level summary row.

    ``per_point`` pools all (actual, forecast) pairs; RMSSE then pools the
    scaled errors ``(f - y) / scale`` of series with a defined scale.
    ``per_series`` averages the per-series metric values. Series without a
    scale are left out of RMSSE in both modes and counted in
    ``rmsse_excluded``.
    """
    if weights not in ("per_point", "per_series"):
        raise ValueError(f"weights must be 'per_point' or 'per_series', got {weights!r}")
    items = list(per_series)
    if not items:
        raise ValueError("nothing to aggregate")
    excluded = sum(1 for s in items if s.scale is None)
    row: dict = {"n_series": len(items), "rmsse_excluded": excluded}

    if weights == "per_point":
        y = np.concatenate([s.actuals for s in items])
        f = np.concatenate([s.forecasts for s in items])
        pm = point_metrics(y, f)
        scaled = [(s.forecasts - s.actuals) / s.scale for s in items if s.scale is not None]
        rmsse = float(np.sqrt(np.mean(np.concatenate(scaled) ** 2))) if scaled else None
        row.update(me=pm.me, mae=pm.mae, rmse=pm.rmse, rmsse=rmsse)
        probs = [s for s in items if s.quantiles and s.lo is not None]
        if probs:
            yq = np.concatenate([s.actuals for s in probs])
            qs = probs[0].quantiles.keys()
            pin = mean_pinball(yq, {q: np.concatenate([s.quantiles[q] for s in probs]) for q in qs})
            cov, aiw = coverage_aiw(
                yq,
                np.concatenate([s.lo for s in probs]),
                np.concatenate([s.hi for s in probs]),
            )
            row.update(pinball=pin, mean_pinball=float(np.mean(list(pin.values()))),
                       coverage=cov, aiw=aiw)
        return row

    pms = [s.point() for s in items]
    row.update(
        me=float(np.mean([p.me for p in pms])),
        mae=float(np.mean([p.mae for p in pms])),
        rmse=float(np.mean([p.rmse for p in pms])),
        rmsse=_mean_or_none(p.rmsse for p in pms),
    )
    probs = [p for p in (s.prob() for s in items) if p is not None]
    if probs:
        qs = probs[0].pinball.keys()
        pin = {q: float(np.mean([p.pinball[q] for p in probs])) for q in qs}
        row.update(
            pinball=pin,
            mean_pinball=float(np.mean(list(pin.values()))),
            coverage=float(np.mean([p.coverage for p in probs])),
            aiw=float(np.mean([p.aiw for p in probs])),
        )
    return row
