"""Panel ingestion, cleaning, fixed-origin splitting and sufficient statistics."""

from __future__ import annotations

import csv
import datetime as _dt
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "DemandSeries",
    "Panel",
    "SplitSpec",
    "SeriesStats",
    "StatsTable",
    "PanelFormatError",
    "ShortSeriesError",
    "load_panel",
    "load_transactions",
    "write_panel",
    "preprocess",
    "split_fixed_origin",
    "compute_stats",
    "panel_stats",
]

FREQUENCIES = ("daily", "weekly", "custom")


class PanelFormatError(ValueError):
    """Raised when a panel file cannot be parsed."""


class ShortSeriesError(ValueError):
    """Raised when series are too short for the requested split."""

    def __init__(self, ids: Sequence[str], needed: int):
        self.ids = list(ids)
        self.needed = needed
        shown = ", ".join(self.ids[:10]) + (" ..." if len(self.ids) > 10 else "")
        super().__init__(
            f"{len(self.ids)} series shorter than {needed} periods: {shown}"
        )


@dataclass(frozen=True, eq=False)
class DemandSeries:
    """One item's demand on a regular grid.

    ``periods`` is only set for irregular series (loaded with gaps kept);
    it holds the integer period label of each value. Regular series have
    ``periods=None`` and occupy ``start_index, start_index + 1, ...``.
    """

    id: str
    values: np.ndarray
    start_index: int = 0
    periods: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError(f"series {self.id!r}: values must be a non-empty 1-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.id!r}: values must be finite")
        if np.any(values < 0):
            raise ValueError(f"series {self.id!r}: values must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.periods is not None:
            periods = np.asarray(self.periods, dtype=np.int64)
            if periods.shape != values.shape:
                raise ValueError(f"series {self.id!r}: periods/values length mismatch")
            if np.any(np.diff(periods) <= 0):
                raise ValueError(f"series {self.id!r}: periods must be strictly increasing")
            periods.setflags(write=False)
            object.__setattr__(self, "periods", periods)
            object.__setattr__(self, "start_index", int(periods[0]))

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemandSeries):
            return NotImplemented
        same_periods = (self.periods is None and other.periods is None) or (
            self.periods is not None
            and other.periods is not None
            and np.array_equal(self.periods, other.periods)
        )
        return (
            self.id == other.id
            and self.start_index == other.start_index
            and same_periods
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def is_regular(self) -> bool:
        return self.periods is None or bool(np.all(np.diff(self.periods) == 1))


@dataclass(frozen=True)
class Panel:
    """An ordered collection of uniquely identified demand series."""

    series: tuple = ()
    frequency: str = "custom"

    def __post_init__(self):
        series = tuple(self.series)
        ids = [s.id for s in series]
        if len(set(ids)) != len(ids):
            seen, dup = set(), []
            for i in ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise ValueError(f"duplicate series ids: {sorted(set(dup))[:10]}")
        if self.frequency not in FREQUENCIES:
            raise ValueError(f"frequency must be one of {FREQUENCIES}, got {self.frequency!r}")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "_index", {s.id: k for k, s in enumerate(series)})

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self) -> Iterator[DemandSeries]:
        return iter(self.series)

    def __getitem__(self, key: str) -> DemandSeries:
        return self.series[self._index[key]]

    def __contains__(self, key: str) -> bool:
        return key in self._index

    @property
    def ids(self) -> list:
        return [s.id for s in self.series]

    def subset(self, ids: Iterable[str]) -> "Panel":
        return Panel(tuple(self[i] for i in ids), self.frequency)


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 1.0 / 3.0
    min_init_periods: int = 1

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction}")
        if int(self.min_init_periods) < 1:
            raise ValueError("min_init_periods must be >= 1")

    def origin(self, length: int) -> int:
        # small slack so that e.g. 9 * (1/3) floors to 3
        return max(int(self.min_init_periods), math.floor(self.fraction * length + 1e-9))


@dataclass(frozen=True)
class SeriesStats:
    """Sufficient statistics of one in-sample window."""

    n: int
    m: int
    mean_log_size: Optional[float] = None
    var_log_size: Optional[float] = None
    sum_size: float = 0.0
    sum_log_size: float = 0.0

    def __post_init__(self):
        if not 0 <= self.m <= self.n:
            raise ValueError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")
        if self.var_log_size is not None and self.var_log_size < 0:
            raise ValueError("var_log_size must be nonnegative")


# ---------------------------------------------------------------- ingestion


def _parse_period(token: str, frequency: str) -> int:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        day = _dt.date.fromisoformat(token[:10]).toordinal()
    except ValueError:
        raise ValueError(f"period {token!r} is neither an integer nor an ISO date") from None
    if frequency == "weekly":
        # weeks start on Monday; ordinal 1 is a Monday
        return (day - 1) // 7
    return day


def _parse_quantity(token: str) -> float:
    q = float(token)
    if not math.isfinite(q):
        raise ValueError(f"quantity {token!r} is not finite")
    if q < 0:
        raise ValueError(f"negative quantity {token!r}")
    return q


def _build_series(sid: str, by_period: dict, gaps: str) -> DemandSeries:
    periods = np.array(sorted(by_period), dtype=np.int64)
    values = np.array([by_period[p] for p in periods], dtype=float)
    if periods.size > 1 and np.any(np.diff(periods) != 1):
        if gaps == "error":
            raise PanelFormatError(
                f"series {sid!r} is irregular (missing periods between "
                f"{periods[0]} and {periods[-1]}); enable gap filling"
            )
        if gaps == "fill":
            return _fill_gaps(DemandSeries(sid, values, periods=periods))
        return DemandSeries(sid, values, periods=periods)
    return DemandSeries(sid, values, start_index=int(periods[0]))


def load_panel(
    path,
    format: str = "long_csv",
    *,
    gaps: str = "fill",
    delimiter: str = ",",
    frequency: str = "custom",
) -> Panel:
    """Read a demand panel from delimited text.

    Parameters
    ----------
    path : str or Path
        Input file.
    format : {"long_csv", "wide_csv"}
        ``long_csv`` has a header with columns ``id, period, quantity``
        (periods are integers or ISO dates). ``wide_csv`` has one row per
        id followed by one value per period; a header row is optional.
    gaps : {"fill", "error", "keep"}
        What to do with missing periods inside a long-format series:
        zero-fill them, reject the file, or keep the series irregular so
        that :func:`preprocess` can fill it later.
    delimiter : str
        Field separator.
    frequency : {"daily", "weekly", "custom"}
        Grid of the panel. ISO dates are mapped to day (or week) ordinals.

    Returns
    -------
    Panel
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"panel file not found: {path}")
    if gaps not in ("fill", "error", "keep"):
        raise ValueError(f"gaps must be 'fill', 'error' or 'keep', got {gaps!r}")
    if format == "long_csv":
        return _load_long(path, gaps, delimiter, frequency)
    if format == "wide_csv":
        return _load_wide(path, delimiter, frequency)
    raise ValueError(f"unknown panel format {format!r}")


def _load_long(path: Path, gaps: str, delimiter: str, frequency: str) -> Panel:
    data: dict = defaultdict(lambda: defaultdict(float))
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise PanelFormatError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        missing = [c for c in ("id", "period", "quantity") if c not in cols]
        if missing:
            raise PanelFormatError(f"{path}: missing column(s) {missing} in header {header}")
        i_id, i_p, i_q = (cols.index(c) for c in ("id", "period", "quantity"))
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                sid = row[i_id].strip()
                period = _parse_period(row[i_p], frequency)
                qty = _parse_quantity(row[i_q])
            except (IndexError, ValueError) as exc:
                raise PanelFormatError(f"{path}: row {row_no}: {exc}") from None
            data[sid][period] += qty
    series = [_build_series(sid, by_p, gaps) for sid, by_p in data.items()]
    return Panel(tuple(series), frequency)


def _load_wide(path: Path, delimiter: str, frequency: str) -> Panel:
    series = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if row_no == 1 and row[0].strip().lower() == "id":
                continue
            try:
                values = [_parse_quantity(c) for c in row[1:] if c.strip() != ""]
                series.append(DemandSeries(row[0].strip(), np.array(values)))
            except ValueError as exc:
                raise PanelFormatError(f"{path}: row {row_no}: {exc}") from None
    return Panel(tuple(series), frequency)


def load_transactions(
    path,
    *,
    id_col: str = "StockCode",
    date_col: str = "InvoiceDate",
    quantity_col: str = "Quantity",
    price_col: Optional[str] = "UnitPrice",
    invoice_col: Optional[str] = "InvoiceNo",
    delimiter: str = ",",
    frequency: str = "daily",
) -> Panel:
    """Aggregate a transaction log (Online Retail layout) into a demand panel.

    Records with nonpositive quantity, nonpositive price, or a cancelled
    invoice (prefix ``C``) are dropped before aggregation. Gaps are kept so
    that :func:`preprocess` can zero-fill them.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"transaction file not found: {path}")
    data: dict = defaultdict(lambda: defaultdict(float))
    with path.open(newline="", encoding="utf-8", errors="replace") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        for col in (id_col, date_col, quantity_col):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise PanelFormatError(f"{path}: missing column {col!r}")
        for row_no, row in enumerate(reader, start=2):
            try:
                qty = float(row[quantity_col])
                price = float(row[price_col]) if price_col and row.get(price_col) else 1.0
            except (TypeError, ValueError) as exc:
                raise PanelFormatError(f"{path}: row {row_no}: {exc}") from None
            if qty <= 0 or price <= 0:
                continue
            if invoice_col and str(row.get(invoice_col, "")).startswith("C"):
                continue
            stamp = row[date_col].strip()
            try:
                day = _parse_timestamp(stamp)
            except ValueError as exc:
                raise PanelFormatError(f"{path}: row {row_no}: {exc}") from None
            period = (day - 1) // 7 if frequency == "weekly" else day
            data[row[id_col].strip()][period] += qty
    series = [_build_series(sid, by_p, "keep") for sid, by_p in sorted(data.items())]
    return Panel(tuple(series), frequency)


def _parse_timestamp(stamp: str) -> int:
    try:
        return _dt.date.fromisoformat(stamp[:10]).toordinal()
    except ValueError:
        pass
    # Online Retail ships as e.g. "12/1/2010 8:26"
    for fmt in ("%m/%d/%Y %H:%M", "%m/%d/%Y", "%d/%m/%Y %H:%M"):
        try:
            return _dt.datetime.strptime(stamp, fmt).date().toordinal()
        except ValueError:
            continue
    raise ValueError(f"unrecognised timestamp {stamp!r}")


def write_panel(panel: Panel, path, *, delimiter: str = ",") -> None:
    """Write a regular panel in long format with 6-decimal quantities."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", "period", "quantity"])
        for s in panel:
            periods = s.periods if s.periods is not None else s.start_index + np.arange(len(s))
            for p, v in zip(periods, s.values):
                w.writerow([s.id, int(p), f"{v:.6f}"])


# ---------------------------------------------------------------- cleaning


def _fill_gaps(s: DemandSeries) -> DemandSeries:
    if s.periods is None:
        return s
    p0 = int(s.periods[0])
    out = np.zeros(int(s.periods[-1]) - p0 + 1)
    out[s.periods - p0] = s.values
    return DemandSeries(s.id, out, start_index=p0)


def preprocess(panel: Panel, cap_quantile: float = 0.995) -> Panel:
    """Cap outliers panel-wide and zero-fill interior gaps.

    Zero records are dropped first, then every quantity above the
    ``cap_quantile`` empirical quantile of all positive values in the panel
    is clamped to that quantile, and finally each series is zero-filled
    between its first and last observed period. The cap is the empirical
    quantile read off the inverted CDF, i.e. an observed value, so a second
    pass leaves the panel unchanged.
    """
    if not 0.0 < cap_quantile <= 1.0:
        raise ValueError(f"cap_quantile must lie in (0, 1], got {cap_quantile}")
    if len(panel) == 0:
        raise ValueError("cannot preprocess an empty panel")
    positives = np.concatenate([s.values[s.values > 0] for s in panel])
    cap = math.inf
    if positives.size:
        cap = float(np.quantile(positives, cap_quantile, method="inverted_cdf"))
    out = []
    for s in panel:
        if s.periods is not None:
            keep = s.values > 0
            if keep.any():
                s = DemandSeries(s.id, s.values[keep], periods=s.periods[keep])
            s = _fill_gaps(s)
        values = np.minimum(s.values, cap)
        out.append(DemandSeries(s.id, values, start_index=s.start_index))
    return Panel(tuple(out), panel.frequency)


# ---------------------------------------------------------------- splitting


def split_fixed_origin(panel: Panel, spec: SplitSpec = SplitSpec(), *, drop_short: bool = False):
    """Split every series at its fixed origin ``t0``.

    ``t0 = max(min_init_periods, floor(fraction * T))``; the first ``t0``
    values form the in-sample window and the rest the evaluation window.

    Returns
    -------
    (Panel, Panel)
        In-sample and out-of-sample panels with matching ids.
    """
    short = []
    ins, oos = [], []
    for s in panel:
        if not s.is_regular:
            raise ValueError(f"series {s.id!r} is irregular; run preprocess first")
        T = len(s)
        t0 = spec.origin(T)
        if T < spec.min_init_periods + 1 or t0 >= T:
            short.append(s.id)
            continue
        ins.append(DemandSeries(s.id, s.values[:t0], start_index=s.start_index))
        oos.append(DemandSeries(s.id, s.values[t0:], start_index=s.start_index + t0))
    if short and not drop_short:
        raise ShortSeriesError(short, spec.min_init_periods + 1)
    return Panel(tuple(ins), panel.frequency), Panel(tuple(oos), panel.frequency)


# ---------------------------------------------------------------- statistics


def compute_stats(series) -> SeriesStats:
    """Sufficient statistics of a window (a DemandSeries or array)."""
    y = series.values if isinstance(series, DemandSeries) else np.asarray(series, dtype=float)
    if y.size == 0:
        raise ValueError("window must be nonempty")
    pos = y[y > 0]
    m = int(pos.size)
    if m == 0:
        return SeriesStats(n=int(y.size), m=0)
    logs = np.log(pos)
    mean_log = float(logs.mean())
    var_log = float(np.var(logs, ddof=1)) if m > 1 else None
    return SeriesStats(
        n=int(y.size),
        m=m,
        mean_log_size=mean_log,
        var_log_size=var_log,
        sum_size=float(pos.sum()),
        sum_log_size=float(logs.sum()),
    )


@dataclass(frozen=True)
class StatsTable:
    """Column-oriented sufficient statistics for a whole panel.

    Undefined entries (``mean_log`` for m=0, ``var_log`` for m<2) are NaN.
    """

    ids: tuple
    n: np.ndarray
    m: np.ndarray
    mean_log: np.ndarray
    var_log: np.ndarray
    sum_size: np.ndarray
    sum_log: np.ndarray
    _rows: dict = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def within_ss(self) -> np.ndarray:
        """Within-item sum of squares of log sizes (0 where m < 2)."""
        return np.where(self.m > 1, np.nan_to_num(self.var_log) * (self.m - 1), 0.0)

    def row(self, k: int) -> SeriesStats:
        m = int(self.m[k])
        return SeriesStats(
            n=int(self.n[k]),
            m=m,
            mean_log_size=float(self.mean_log[k]) if m > 0 else None,
            var_log_size=float(self.var_log[k]) if m > 1 else None,
            sum_size=float(self.sum_size[k]),
            sum_log_size=float(self.sum_log[k]),
        )

    def __getitem__(self, sid: str) -> SeriesStats:
        return self.row(self.index(sid))

    def index(self, sid: str) -> int:
        rows = self._rows
        if rows is None:
            rows = {i: k for k, i in enumerate(self.ids)}
            object.__setattr__(self, "_rows", rows)
        return rows[sid]

    @classmethod
    def from_stats(cls, ids: Sequence[str], stats: Sequence[SeriesStats]) -> "StatsTable":
        def col(f, dtype=float):
            return np.array([f(s) for s in stats], dtype=dtype)

        return cls(
            ids=tuple(ids),
            n=col(lambda s: s.n, np.int64),
            m=col(lambda s: s.m, np.int64),
            mean_log=col(lambda s: np.nan if s.mean_log_size is None else s.mean_log_size),
            var_log=col(lambda s: np.nan if s.var_log_size is None else s.var_log_size),
            sum_size=col(lambda s: s.sum_size),
            sum_log=col(lambda s: s.sum_log_size),
        )


def panel_stats(panel: Panel) -> StatsTable:
    """Vectorised :func:`compute_stats` over every series of a panel."""
    N = len(panel)
    lengths = np.fromiter((len(s) for s in panel), dtype=np.int64, count=N)
    if N == 0:
        empty = np.zeros(0)
        return StatsTable((), lengths, lengths.copy(), empty, empty, empty, empty)
    if np.any(lengths == 0):
        raise ValueError("every window must be nonempty")
    y = np.concatenate([s.values for s in panel])
    owner = np.repeat(np.arange(N), lengths)
    pos = y > 0
    m = np.bincount(owner[pos], minlength=N).astype(np.int64)
    logs = np.log(y[pos])
    who = owner[pos]
    sum_log = np.bincount(who, weights=logs, minlength=N)
    sum_size = np.bincount(who, weights=y[pos], minlength=N)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_log = np.where(m > 0, sum_log / np.maximum(m, 1), np.nan)
        dev2 = np.bincount(who, weights=(logs - mean_log[who]) ** 2, minlength=N)
        var_log = np.where(m > 1, dev2 / np.maximum(m - 1, 1), np.nan)
    return StatsTable(
        ids=tuple(panel.ids),
        n=lengths,
        m=m,
        mean_log=mean_log,
        var_log=var_log,
        sum_size=sum_size,
        sum_log=sum_log,
    )


def with_values(series: DemandSeries, values) -> DemandSeries:
    """Copy of ``series`` with replaced values (same id and start)."""
    return replace(series, values=np.asarray(values, dtype=float), periods=None)
