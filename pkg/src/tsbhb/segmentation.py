"""ADI / CV^2 demand-pattern classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from ._validation import check_series
from .metrics import SeriesEval, aggregate

__all__ = ["SegmentLabel", "classify", "segment_report", "SEGMENTS", "ADI_CUT", "CV2_CUT"]

ADI_CUT = 1.32
CV2_CUT = 0.49
SEGMENTS = ("smooth", "erratic", "intermittent", "lumpy", "undefined")


@dataclass(frozen=True)
class SegmentLabel:
    adi: Optional[float]
    cv2: Optional[float]
    label: str


def _label(adi: float, cv2: float) -> str:
    if adi >= ADI_CUT:
        return "lumpy" if cv2 >= CV2_CUT else "intermittent"
    return "erratic" if cv2 >= CV2_CUT else "smooth"


def classify(series) -> SegmentLabel:
    """ADI = periods per positive period; CV^2 of positive sizes (ddof=1)."""
    y = check_series(series)
    pos = y[y > 0]
    m = pos.size
    adi = y.size / m if m > 0 else None
    cv2 = float(np.var(pos, ddof=1) / pos.mean() ** 2) if m > 1 else None
    if adi is None or cv2 is None:
        return SegmentLabel(adi, cv2, "undefined")
    return SegmentLabel(float(adi), cv2, _label(adi, cv2))


def segment_report(
    labels: Mapping[str, SegmentLabel],
    results: Mapping[str, Mapping[str, SeriesEval]],
    metrics=("rmsse", "mae", "rmse", "me"),
) -> pd.DataFrame:
    """Per-model, per-segment metric table in both aggregation modes.

    ``results`` maps model name to ``{series id: SeriesEval}``; every model
    must cover exactly the labelled ids. Empty segments get count 0 and
    missing metric values.
    """
    ids = set(labels)
    rows = []
    for model, per_id in results.items():
        if set(per_id) != ids:
            missing = sorted(ids ^ set(per_id))[:5]
            raise KeyError(f"model {model!r}: ids do not match labels (e.g. {missing})")
        for seg in SEGMENTS:
            members = [per_id[i] for i in sorted(ids) if labels[i].label == seg]
            row = {"model": model, "segment": seg, "count": len(members)}
            for mode in ("per_point", "per_series"):
                agg = aggregate(members, mode) if members else {}
                for metric in metrics:
                    row[f"{metric}_{mode}"] = agg.get(metric)
            rows.append(row)
    return pd.DataFrame(rows)
