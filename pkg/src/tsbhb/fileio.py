"""Plain-text model files and experiment configuration files."""

from __future__ import annotations

import csv
import io as _io
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .model import TSBHB, VARIANTS
from .occurrence import OccurrenceHyper
from .panel import StatsTable
from .size import GammaSizeHyper, SizeHyper

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

__all__ = [
    "ModelFileError",
    "save_model",
    "load_model",
    "ExperimentConfig",
    "load_config",
    "default_threads",
]

MAGIC = "# tsbhb model file"
ITEM_COLUMNS = (
    "id", "n", "m", "mean_log", "var_log", "sum_size", "sum_log",
    "pi_hat", "lambda", "mu_hat", "v_mu", "w", "s_hat", "y_hat",
)


class ModelFileError(ValueError):
    """Raised for unreadable, incomplete or inconsistent model files."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def save_model(model: TSBHB, path) -> None:
    """Write hyperparameters, item statistics and posteriors to ``path``.

    Floats are written with full ``repr`` precision so that loading the file
    reproduces the forecasts exactly.
    """
    if not hasattr(model, "y_hat_"):
        raise ModelFileError("model is not fitted")
    header = {
        "format_version": 1,
        "variant": model.variant,
        "occurrence.mu_pi": model.occurrence_hyper_.mu_pi,
        "occurrence.phi": model.occurrence_hyper_.phi,
    }
    occ_fit = model.occurrence_fit_
    if occ_fit is not None:
        header["occurrence.converged"] = occ_fit.converged
        header["occurrence.at_boundary"] = occ_fit.at_boundary
    h = model.size_hyper_
    if isinstance(h, GammaSizeHyper):
        header.update({"size.alpha_s": h.alpha_s, "size.a": h.a, "size.b": h.b})
    else:
        header.update({"size.mu0": h.mu0, "size.tau2": h.tau2, "size.sigma2": h.sigma2})
    if model.size_fit_ is not None:
        header["size.at_boundary"] = model.size_fit_.at_boundary

    st = model.stats_
    with Path(path).open("w", newline="") as fh:
        fh.write(MAGIC + "\n")
        for k, v in header.items():
            fh.write(f"{k} = {_fmt(v) if not isinstance(v, str) else v}\n")
        fh.write("[items]\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITEM_COLUMNS)
        cols = (st.n, st.m, st.mean_log, st.var_log, st.sum_size, st.sum_log,
                model.pi_hat_, model.lambda_, model.mu_hat_, model.v_mu_, model.w_,
                model.s_hat_, model.y_hat_)
        for k, sid in enumerate(model.ids_):
            w.writerow([sid] + [_fmt(c[k]) for c in cols])


def _parse_value(raw: str):
    raw = raw.strip()
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return float(raw)
    except ValueError:
        return raw


def load_model(path) -> TSBHB:
    """Read a model file and rebuild the fitted estimator.

    Posteriors are recomputed from the stored statistics and checked against
    the stored values; a mismatch means the file was edited or corrupted.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    text = path.read_text()
    if not text.startswith(MAGIC):
        raise ModelFileError(f"{path}: not a tsbhb model file")
    head, sep, body = text.partition("[items]\n")
    if not sep:
        raise ModelFileError(f"{path}: missing [items] section")
    header = {}
    for line in head.splitlines()[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ModelFileError(f"{path}: malformed header line {line!r}")
        header[key.strip()] = _parse_value(val)

    try:
        variant = header["variant"]
        if variant not in VARIANTS:
            raise ModelFileError(f"{path}: unknown variant {variant!r}")
        occ = OccurrenceHyper(header["occurrence.mu_pi"], header["occurrence.phi"])
        if variant == "gamma":
            size = GammaSizeHyper(header["size.alpha_s"], header["size.a"], header["size.b"])
        else:
            size = SizeHyper(header["size.mu0"], header["size.tau2"], header["size.sigma2"])
    except KeyError as exc:
        raise ModelFileError(f"{path}: missing header key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: {exc}") from None

    rows = list(csv.reader(_io.StringIO(body)))
    if not rows or tuple(rows[0]) != ITEM_COLUMNS:
        raise ModelFileError(f"{path}: bad item header")
    rows = [r for r in rows[1:] if r]
    if not rows:
        raise ModelFileError(f"{path}: model has no items")
    try:
        ids = [r[0] for r in rows]
        num = np.array([[float(v) for v in r[1:]] for r in rows])
    except (ValueError, IndexError) as exc:
        raise ModelFileError(f"{path}: {exc}") from None
    stats = StatsTable(
        ids=tuple(ids),
        n=num[:, 0].astype(np.int64),
        m=num[:, 1].astype(np.int64),
        mean_log=num[:, 2],
        var_log=num[:, 3],
        sum_size=num[:, 4],
        sum_log=num[:, 5],
    )
    model = TSBHB.from_state(variant, stats, occ, size)
    stored = num[:, 12]
    if not np.allclose(model.y_hat_, stored, rtol=1e-9, atol=1e-12):
        raise ModelFileError(f"{path}: stored forecasts disagree with stored statistics")
    model.header_ = header
    return model


# ------------------------------------------------------------------- config


def default_threads() -> int:
    try:
        return max(int(os.environ.get("TSBHB_NUM_THREADS", "1")), 1)
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run the fixed-origin benchmark."""

    data_path: Optional[str] = None
    data_format: str = "long_csv"
    transactions: bool = False
    delimiter: str = ","
    frequency: str = "custom"
    split_fraction: float = 1.0 / 3.0
    min_init_periods: int = 1
    drop_short: bool = True
    cap_quantile: float = 0.995
    models: tuple = ("tsb-hb", "tsb", "adida", "imapa", "sba", "croston")
    tsb_grid: tuple = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
    tsb_validation: str = "faithful"
    quantiles: tuple = (0.10, 0.25, 0.50, 0.75, 0.90)
    level: float = 0.80
    aggregation: str = "per_point"
    segment_window: str = "in_sample"
    output_dir: str = "reports"
    seed: int = 0
    n_jobs: int = field(default_factory=default_threads)
    timing: bool = False
    ablation: bool = True
    # synthetic panel, used when data_path is None
    synthetic_items: int = 500
    synthetic_periods: int = 120
    synthetic_mu_pi: float = 0.1
    synthetic_phi: float = 5.0
    synthetic_mu0: float = 1.0
    synthetic_tau2: float = 0.5
    synthetic_sigma2: float = 1.0

    def __post_init__(self):
        qs = tuple(float(q) for q in self.quantiles)
        if not qs or any(not 0 < q < 1 for q in qs) or any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError(f"quantiles must be strictly increasing in (0, 1), got {qs}")
        if not 0 < float(self.level) < 1:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")
        if self.aggregation not in ("per_point", "per_series"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.tsb_validation not in ("faithful", "honest"):
            raise ValueError("tsb_validation must be 'faithful' or 'honest'")
        if self.segment_window not in ("in_sample", "full"):
            raise ValueError("segment_window must be 'in_sample' or 'full'")
        object.__setattr__(self, "quantiles", qs)
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "tsb_grid", tuple(float(g) for g in self.tsb_grid))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)


# TOML table/key -> ExperimentConfig field
_CONFIG_KEYS = {
    ("data", "path"): "data_path",
    ("data", "format"): "data_format",
    ("data", "transactions"): "transactions",
    ("data", "delimiter"): "delimiter",
    ("data", "frequency"): "frequency",
    ("split", "fraction"): "split_fraction",
    ("split", "min_init_periods"): "min_init_periods",
    ("split", "drop_short"): "drop_short",
    ("preprocess", "cap_quantile"): "cap_quantile",
    ("models", "names"): "models",
    ("tsb", "grid"): "tsb_grid",
    ("tsb", "validation"): "tsb_validation",
    ("evaluation", "quantiles"): "quantiles",
    ("evaluation", "level"): "level",
    ("evaluation", "aggregation"): "aggregation",
    ("evaluation", "segment_window"): "segment_window",
    ("evaluation", "timing"): "timing",
    ("evaluation", "ablation"): "ablation",
    ("output", "directory"): "output_dir",
    ("run", "seed"): "seed",
    ("run", "n_jobs"): "n_jobs",
    ("synthetic", "n_items"): "synthetic_items",
    ("synthetic", "n_periods"): "synthetic_periods",
    ("synthetic", "mu_pi"): "synthetic_mu_pi",
    ("synthetic", "phi"): "synthetic_phi",
    ("synthetic", "mu0"): "synthetic_mu0",
    ("synthetic", "tau2"): "synthetic_tau2",
    ("synthetic", "sigma2"): "synthetic_sigma2",
}


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment file; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ValueError(f"{path}: {exc}") from None
    kw = {}
    for table, entries in raw.items():
        if not isinstance(entries, dict):
            raise ValueError(f"{path}: top-level key {table!r} must be a table")
        for key, value in entries.items():
            target = _CONFIG_KEYS.get((table, key))
            if target is None:
                raise ValueError(f"{path}: unknown setting [{table}] {key}")
            kw[target] = tuple(value) if isinstance(value, list) else value
    if kw.get("data_path") is not None:
        p = Path(kw["data_path"])
        if not p.is_absolute():
            kw["data_path"] = str((path.parent / p).resolve())
    names = {f.name for f in fields(ExperimentConfig)}
    assert set(kw) <= names
    return ExperimentConfig(**kw)
