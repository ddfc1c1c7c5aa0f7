"""Input checks shared by the estimators and metric functions."""

from __future__ import annotations

import numbers

import numpy as np

from .panel import DemandSeries, Panel


def check_panel(X, *, allow_empty: bool = False) -> Panel:
    """Coerce ``X`` to a regular :class:`Panel`.

    Accepts a Panel, a single DemandSeries, or a mapping ``id -> values``.
    """
    if isinstance(X, DemandSeries):
        X = Panel((X,))
    elif isinstance(X, dict):
        X = Panel(tuple(DemandSeries(str(k), np.asarray(v, float)) for k, v in X.items()))
    elif not isinstance(X, Panel):
        raise TypeError(f"expected a Panel, got {type(X).__name__}")
    if len(X) == 0 and not allow_empty:
        raise ValueError("panel is empty")
    irregular = [s.id for s in X if not s.is_regular]
    if irregular:
        raise ValueError(f"irregular series {irregular[:5]}; run preprocess first")
    return X


def check_series(y, *, name: str = "series", min_length: int = 1) -> np.ndarray:
    if isinstance(y, DemandSeries):
        y = y.values
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if y.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} observations, got {y.size}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    return y


def check_consistent_length(*arrays):
    arrays = [np.asarray(a, dtype=float).ravel() for a in arrays]
    lengths = {a.size for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"length mismatch: {[a.size for a in arrays]}")
    if arrays and arrays[0].size == 0:
        raise ValueError("empty input")
    return arrays


def check_horizon(horizon) -> int:
    if not isinstance(horizon, numbers.Integral) or horizon < 1:
        raise ValueError(f"horizon must be an integer >= 1, got {horizon!r}")
    return int(horizon)


def check_quantile(q) -> float:
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    return q


def check_level(level) -> float:
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValueError(f"interval level must lie in (0, 1), got {level}")
    return level


def check_smoothing(value, name: str) -> float:
    value = float(value)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")
    return value
