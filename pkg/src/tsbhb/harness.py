"""Fixed-origin benchmark: preprocess, split, fit, forecast, score, report."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .baselines import (
    ADIDA,
    IMAPA,
    SBA,
    TSB,
    Croston,
    SmoothingParams,
    naive_insample_scale,
    tsb_grid_search,
)
from .fileio import ExperimentConfig
from .metrics import SeriesEval, aggregate
from .model import TSBHB, shrinkage_report
from .occurrence import OccurrenceHyper
from .panel import (
    Panel,
    SplitSpec,
    load_panel,
    load_transactions,
    panel_stats,
    preprocess,
    split_fixed_origin,
)
from .segmentation import classify, segment_report
from .simulate import SyntheticSpec, generate_panel
from .size import SizeHyper

__all__ = [
    "EvalReport",
    "MODELS",
    "ABLATION_VARIANTS",
    "prepare_panels",
    "run_experiment",
    "ablation",
    "timing_report",
    "write_report",
    "quantile_label",
]

log = logging.getLogger(__name__)

MODELS = ("tsb-hb", "tsb", "adida", "imapa", "sba", "croston",
          "tsb-hb-gamma", "tsb-mle-lognormal")
ABLATION_VARIANTS = {
    "TSB-HB-LogNormal": "lognormal",
    "TSB-HB-Gamma": "gamma",
    "TSB-MLE-LogNormal": "mle_lognormal",
}
_HB_VARIANT = {"tsb-hb": "lognormal", "tsb-hb-gamma": "gamma", "tsb-mle-lognormal": "mle_lognormal"}


def quantile_label(q: float) -> str:
    return "q" + f"{100 * q:g}".replace(".", "_")


def _level_label(level: float) -> str:
    return f"{100 * level:g}".replace(".", "_")


@dataclass
class EvalReport:
    main: pd.DataFrame
    prob: pd.DataFrame
    segments: pd.DataFrame
    ablation: pd.DataFrame
    shrinkage: pd.DataFrame
    shrinkage_summary: pd.DataFrame
    grid_audit: pd.DataFrame
    skipped: pd.DataFrame
    timing: Optional[pd.DataFrame] = None
    hyperparameters: Dict[str, float] = field(default_factory=dict)
    results: Dict[str, Dict[str, SeriesEval]] = field(default_factory=dict, repr=False)

    @property
    def partial(self) -> bool:
        return bool((self.skipped["id"] == "*").any()) if len(self.skipped) else False


# ------------------------------------------------------------------ data


def load_dataset(config: ExperimentConfig) -> Panel:
    if config.data_path is None:
        spec = SyntheticSpec(
            n_items=config.synthetic_items,
            n_periods=config.synthetic_periods,
            occurrence=OccurrenceHyper(config.synthetic_mu_pi, config.synthetic_phi),
            size=SizeHyper(config.synthetic_mu0, config.synthetic_tau2, config.synthetic_sigma2),
            seed=config.seed,
        )
        return generate_panel(spec).panel
    if config.transactions:
        return load_transactions(config.data_path, delimiter=config.delimiter,
                                 frequency=config.frequency if config.frequency != "custom" else "daily")
    return load_panel(config.data_path, config.data_format, gaps="keep",
                      delimiter=config.delimiter, frequency=config.frequency)


def prepare_panels(config: ExperimentConfig, panel: Optional[Panel] = None):
    """Load (or take) a panel, clean it and split it at the fixed origin.

    Returns ``(full, in_sample, out_of_sample, short_ids)``.
    """
    raw = load_dataset(config) if panel is None else panel
    full = preprocess(raw, config.cap_quantile)
    spec = SplitSpec(config.split_fraction, config.min_init_periods)
    p_in, p_oos = split_fixed_origin(full, spec, drop_short=config.drop_short)
    short = sorted(set(full.ids) - set(p_in.ids))
    if len(p_in) == 0:
        raise ValueError("no series survive the fixed-origin split")
    return full.subset(p_in.ids), p_in, p_oos, short


# ---------------------------------------------------------------- fitting


def _grid(config: ExperimentConfig):
    return [SmoothingParams(d, p) for d, p in product(config.tsb_grid, config.tsb_grid)]


def _select_tsb(config, p_in: Panel, p_oos: Panel):
    grid = _grid(config)
    if config.tsb_validation == "faithful":
        return tsb_grid_search(p_in, p_oos, grid)
    inner_in, inner_val = split_fixed_origin(p_in, SplitSpec(2.0 / 3.0, 1), drop_short=True)
    if len(inner_in) == 0:
        raise ValueError("in-sample windows too short for an inner validation split")
    return tsb_grid_search(inner_in, inner_val, grid)


def _fit_one(name: str, config: ExperimentConfig, p_in: Panel, p_oos: Panel):
    """Fit one model; returns a dict with forecasts and side outputs."""
    out = {"name": name, "flagged": [], "audit": None, "model": None, "error": None}
    try:
        if name in _HB_VARIANT:
            model = TSBHB(variant=_HB_VARIANT[name]).fit(p_in)
            out["model"] = model
        elif name == "tsb":
            best, audit = _select_tsb(config, p_in, p_oos)
            out["audit"] = audit
            model = TSB(best.alpha_d, best.alpha_p).fit(p_in)
        else:
            model = {"croston": Croston, "sba": SBA, "adida": ADIDA, "imapa": IMAPA}[name]().fit(p_in)
            out["flagged"] = list(model.flagged_ids_)
        out["y_hat"] = model.predict(None, 1)[:, 0]
    except Exception as exc:  # reported in the skip list
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _fit_all(names, config, p_in, p_oos):
    if config.n_jobs > 1 and len(names) > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=config.n_jobs)(
            delayed(_fit_one)(n, config, p_in, p_oos) for n in names
        )
    return [_fit_one(n, config, p_in, p_oos) for n in names]


def _scales(p_in: Panel) -> Dict[str, Optional[float]]:
    out = {}
    for s in p_in:
        out[s.id] = naive_insample_scale(s.values) if len(s) >= 2 else None
    return out


def _evaluate(fit, config, p_in, p_oos, scales, probabilistic: bool):
    per_id = {}
    y_hat = fit["y_hat"]
    model = fit["model"]
    lo_q, hi_q = (1 - config.level) / 2, (1 + config.level) / 2
    if probabilistic:
        Q = model.predict_quantiles(config.quantiles)
        LH = model.predict_quantiles([lo_q, hi_q])
    for k, s in enumerate(p_in):
        actual = p_oos[s.id].values
        h = actual.size
        ev = SeriesEval(s.id, actual, np.full(h, y_hat[k]), scales[s.id])
        if probabilistic:
            ev.quantiles = {q: np.full(h, Q[k, j]) for j, q in enumerate(config.quantiles)}
            ev.lo = np.full(h, LH[k, 0])
            ev.hi = np.full(h, LH[k, 1])
        per_id[s.id] = ev
    return per_id


def _metric_row(name, agg, config, probabilistic):
    row = {"model": name, "me": agg["me"], "mae": agg["mae"], "rmse": agg["rmse"],
           "rmsse": agg["rmsse"]}
    lvl = _level_label(config.level)
    for q in config.quantiles:
        row[f"pinball_{quantile_label(q)}"] = agg["pinball"][q] if probabilistic else None
    row["mean_pinball"] = agg.get("mean_pinball") if probabilistic else None
    row[f"coverage{lvl}"] = agg.get("coverage") if probabilistic else None
    row[f"aiw{lvl}"] = agg.get("aiw") if probabilistic else None
    row["n_series"] = agg["n_series"]
    row["rmsse_excluded"] = agg["rmsse_excluded"]
    return row


# -------------------------------------------------------------- top level


def run_experiment(config: ExperimentConfig, panel: Optional[Panel] = None) -> EvalReport:
    """Run the full fixed-origin protocol and assemble every report table.

    Only the log-normal TSB-HB model is scored probabilistically; all other
    models are point forecasters. Models that fail are listed in the skip
    table with the id ``*`` instead of aborting the run.
    """
    names = list(dict.fromkeys(config.models))
    if not names:
        raise ValueError("model list is empty")
    unknown = [n for n in names if n not in MODELS]
    if unknown:
        raise ValueError(f"unknown model(s) {unknown}; choose from {MODELS}")

    full, p_in, p_oos, short = prepare_panels(config, panel)
    skipped = [{"model": "*", "id": i, "reason": "series too short for the split"} for i in short]
    # model "*" marks series dropped for every model; failed models get id "*"
    scales = _scales(p_in)

    fits = _fit_all(names, config, p_in, p_oos)
    results: Dict[str, Dict[str, SeriesEval]] = {}
    main_rows, prob_rows = [], []
    audit = pd.DataFrame(columns=["alpha_d", "alpha_p", "mae"])
    hb_model = None
    for fit in fits:
        name = fit["name"]
        if fit["error"] is not None:
            skipped.append({"model": name, "id": "*", "reason": fit["error"]})
            log.warning("model %s failed: %s", name, fit["error"])
            continue
        for sid in fit["flagged"]:
            skipped.append({"model": name, "id": sid,
                            "reason": "no positive in-sample demand; forecast set to 0"})
        probabilistic = name == "tsb-hb"
        per_id = _evaluate(fit, config, p_in, p_oos, scales, probabilistic)
        results[name] = per_id
        agg = aggregate(list(per_id.values()), config.aggregation)
        row = _metric_row(name, agg, config, probabilistic)
        main_rows.append(row)
        if probabilistic:
            hb_model = fit["model"]
            prob_rows.append({k: v for k, v in row.items()
                              if k == "model" or k.startswith(("pinball", "mean_pinball",
                                                               "coverage", "aiw"))})
        if fit["audit"] is not None:
            audit = fit["audit"]

    window = p_in if config.segment_window == "in_sample" else full
    labels = {s.id: classify(s.values) for s in window}
    segments = segment_report(labels, results) if results else pd.DataFrame()

    shrink = None
    if hb_model is not None:
        try:
            shrink = shrinkage_report(hb_model)
        except ValueError as exc:
            log.warning("shrinkage report skipped: %s", exc)
    if shrink is not None:
        shrink_table, shrink_summary = shrink.table, shrink.summary()
    else:
        shrink_table = pd.DataFrame(columns=["id", "mle_p", "post_p", "mle_size", "post_size"])
        shrink_summary = pd.DataFrame(columns=["quantity", "pearson_r", "variance_reduction_pct"])

    abl = ablation(config, prepared=(p_in, p_oos, scales)) if config.ablation else pd.DataFrame()
    timing = timing_report(p_in) if config.timing else None

    hyper = {}
    if hb_model is not None:
        hyper = {
            "mu_pi": hb_model.occurrence_hyper_.mu_pi,
            "phi": hb_model.occurrence_hyper_.phi,
            "mu0": hb_model.size_hyper_.mu0,
            "tau2": hb_model.size_hyper_.tau2,
            "sigma2": hb_model.size_hyper_.sigma2,
        }
    return EvalReport(
        main=pd.DataFrame(main_rows),
        prob=pd.DataFrame(prob_rows),
        segments=segments,
        ablation=abl,
        shrinkage=shrink_table,
        shrinkage_summary=shrink_summary,
        grid_audit=audit,
        skipped=pd.DataFrame(skipped, columns=["model", "id", "reason"]),
        timing=timing,
        hyperparameters=hyper,
        results=results,
    )


def ablation(config: ExperimentConfig, variants=None, *, panel: Optional[Panel] = None,
             prepared=None) -> pd.DataFrame:
    """Score the three TSB-HB variants on identical splits.

    ``variants`` must be a subset of ``TSB-HB-LogNormal``, ``TSB-HB-Gamma``
    and ``TSB-MLE-LogNormal`` (default: all three).
    """
    variants = list(ABLATION_VARIANTS if variants is None else variants)
    bad = [v for v in variants if v not in ABLATION_VARIANTS]
    if bad:
        raise ValueError(f"unknown ablation variant(s) {bad}; fixed set is {list(ABLATION_VARIANTS)}")
    if prepared is None:
        _, p_in, p_oos, _ = prepare_panels(config, panel)
        scales = _scales(p_in)
    else:
        p_in, p_oos, scales = prepared
    rows = []
    for label in variants:
        try:
            model = TSBHB(variant=ABLATION_VARIANTS[label]).fit(p_in)
        except Exception as exc:
            rows.append({"variant": label, "me": None, "mae": None, "rmse": None,
                         "rmsse": None, "error": f"{type(exc).__name__}: {exc}"})
            continue
        fit = {"y_hat": model.y_hat_, "model": model}
        per_id = _evaluate(fit, config, p_in, p_oos, scales, False)
        agg = aggregate(list(per_id.values()), config.aggregation)
        rows.append({"variant": label, "me": agg["me"], "mae": agg["mae"],
                     "rmse": agg["rmse"], "rmsse": agg["rmsse"], "error": None})
    return pd.DataFrame(rows)


def timing_report(p_in: Panel, variant: str = "lognormal", horizon: int = 1) -> pd.DataFrame:
    """Wall-clock seconds of each fitting/forecasting stage.

    Stages: sufficient statistics, hyperparameter fit, posterior pass and
    forecast pass (means plus the five default quantiles where supported).
    """
    rows = []
    N = len(p_in)

    def stage(name, fn):
        t0 = time.perf_counter()
        result = fn()
        dt = time.perf_counter() - t0
        rows.append({"stage": name, "seconds": dt, "items": N,
                     "items_per_second": N / dt if dt > 0 else float("inf")})
        return result

    stats = stage("stats", lambda: panel_stats(p_in))
    model = TSBHB(variant=variant)

    def hyper_fit():
        from .occurrence import fit_occurrence
        from .size import fit_size_gamma, fit_size_reml

        model.stats_ = stats
        model.ids_ = list(stats.ids)
        model.occurrence_fit_ = fit_occurrence(stats.m, stats.n)
        model.occurrence_hyper_ = model.occurrence_fit_.hyper
        model.size_fit_ = fit_size_gamma(stats) if variant == "gamma" else fit_size_reml(stats)
        model.size_hyper_ = model.size_fit_.hyper

    stage("hyper_fit", hyper_fit)
    stage("posterior", model._set_posteriors)

    def forecast():
        model.predict(None, horizon)
        if variant != "gamma":
            model.predict_quantiles((0.1, 0.25, 0.5, 0.75, 0.9))

    stage("forecast", forecast)
    total = sum(r["seconds"] for r in rows)
    rows.append({"stage": "total", "seconds": total, "items": N,
                 "items_per_second": N / total if total > 0 else float("inf")})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------- output


def _write_csv(df: pd.DataFrame, path: Path):
    df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def write_report(report: EvalReport, out_dir) -> List[Path]:
    """Write every table as CSV (6 decimals) and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "main_metrics.csv": report.main,
        "prob_metrics.csv": report.prob,
        "segments.csv": report.segments,
        "ablation.csv": report.ablation,
        "shrinkage.csv": report.shrinkage,
        "grid_audit.csv": report.grid_audit,
        "skipped.csv": report.skipped,
    }
    if report.timing is not None:
        files["timing.csv"] = report.timing
    paths = []
    for name, df in files.items():
        _write_csv(df, out / name)
        paths.append(out / name)
    return paths
