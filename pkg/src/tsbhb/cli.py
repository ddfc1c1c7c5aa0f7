"""Command-line interface.

Exit codes: 0 success, 1 partial failure (some models or series skipped),
2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fileio import ExperimentConfig, ModelFileError, load_config, load_model, save_model
from .harness import MODELS, run_experiment, write_report
from .model import TSBHB, VARIANTS, shrinkage_report
from .occurrence import OccurrenceHyper
from .panel import (
    PanelFormatError,
    SplitSpec,
    load_panel,
    load_transactions,
    preprocess,
    split_fixed_origin,
    write_panel,
)
from .segmentation import SEGMENTS, classify
from .simulate import SyntheticSpec, generate_panel
from .size import GammaSizeHyper, SizeHyper
from .svg import fmt_stat, write_scatter_svg

log = logging.getLogger("tsbhb")

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _float_list(text: str):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text: str):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _add_input(p, required=True):
    p.add_argument("--input", "-i", required=required, help="panel file (long or wide CSV)")
    p.add_argument("--format", choices=("long_csv", "wide_csv"), default="long_csv",
                   help="input layout (default: long_csv)")
    p.add_argument("--delimiter", default=",", help="field separator (default: ',')")
    p.add_argument("--frequency", choices=("daily", "weekly", "custom"), default="custom",
                   help="period grid; ISO dates map to day or week ordinals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsbhb",
        description="Hierarchical empirical-Bayes TSB forecasting for intermittent demand.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", help="clean a panel: cap outliers, zero-fill gaps")
    _add_input(p)
    p.add_argument("--transactions", action="store_true",
                   help="input is a transaction log (StockCode, InvoiceDate, Quantity, UnitPrice)")
    p.add_argument("--cap-quantile", type=float, default=0.995,
                   help="panel-wide cap quantile of positive quantities (default: 0.995)")
    p.add_argument("--output", "-o", required=True, help="cleaned long-format CSV")

    p = sub.add_parser("fit", help="fit TSB-HB and write a model file")
    _add_input(p)
    p.add_argument("--variant", choices=VARIANTS, default="lognormal",
                   help="size law (default: lognormal)")
    p.add_argument("--split-fraction", type=float, default=None,
                   help="fit only on this leading share of each series (default: whole series)")
    p.add_argument("--model-out", "-o", required=True, help="model file to write")

    p = sub.add_parser("forecast", help="export forecasts from a model file")
    p.add_argument("--model", "-m", required=True, help="model file from 'fit'")
    p.add_argument("--horizon", type=int, default=1, help="periods ahead (default: 1)")
    p.add_argument("--level", type=float, default=0.8, help="interval level (default: 0.8)")
    p.add_argument("--output", "-o", required=True, help="forecast CSV")

    p = sub.add_parser("evaluate", help="run the fixed-origin benchmark")
    p.add_argument("--config", "-c", help="TOML experiment file")
    p.add_argument("--input", "-i", help="panel file (overrides the config)")
    p.add_argument("--format", choices=("long_csv", "wide_csv"), default=None,
                   help="input layout (overrides the config)")
    p.add_argument("--transactions", action="store_true", default=None,
                   help="input is a transaction log")
    p.add_argument("--models", type=_name_list, default=None,
                   help=f"comma-separated subset of {','.join(MODELS)}")
    p.add_argument("--quantiles", type=_float_list, default=None,
                   help="comma-separated quantile levels (default: 0.1,0.25,0.5,0.75,0.9)")
    p.add_argument("--level", type=float, default=None, help="interval level (default: 0.8)")
    p.add_argument("--aggregation", choices=("per_point", "per_series"), default=None,
                   help="how metrics are pooled across series (default: per_point)")
    p.add_argument("--tsb-validation", choices=("faithful", "honest"), default=None,
                   help="TSB grid validated on the evaluation window or an inner split")
    p.add_argument("--split-fraction", type=float, default=None,
                   help="in-sample share of each series (default: 1/3)")
    p.add_argument("--cap-quantile", type=float, default=None,
                   help="outlier cap quantile (default: 0.995)")
    p.add_argument("--seed", type=int, default=None, help="seed for the synthetic panel")
    p.add_argument("--n-jobs", type=int, default=None,
                   help="worker processes (default: $TSBHB_NUM_THREADS or 1)")
    p.add_argument("--timing", action="store_true", default=None,
                   help="also write timing.csv (not byte-reproducible)")
    p.add_argument("--no-ablation", action="store_true", help="skip the ablation table")
    p.add_argument("--output-dir", "-o", default=None, help="report directory (default: reports)")

    p = sub.add_parser("segment", help="ADI / CV^2 classification per series")
    _add_input(p)
    p.add_argument("--window", choices=("in_sample", "full"), default="in_sample",
                   help="statistics window (default: in_sample)")
    p.add_argument("--split-fraction", type=float, default=1.0 / 3.0,
                   help="in-sample share when --window in_sample (default: 1/3)")
    p.add_argument("--output", "-o", required=True, help="per-series segment CSV")

    p = sub.add_parser("simulate", help="draw a synthetic panel from the generative model")
    p.add_argument("--n-items", type=int, default=500, help="number of series (default: 500)")
    p.add_argument("--n-periods", type=int, default=120, help="series length (default: 120)")
    p.add_argument("--mu-pi", type=float, default=0.1, help="prior mean occurrence (default: 0.1)")
    p.add_argument("--phi", type=float, default=5.0, help="prior precision (default: 5)")
    p.add_argument("--mu0", type=float, default=1.0, help="mean log size (default: 1)")
    p.add_argument("--tau2", type=float, default=0.5, help="between-item variance (default: 0.5)")
    p.add_argument("--sigma2", type=float, default=1.0, help="within-item variance (default: 1)")
    p.add_argument("--gamma", type=_float_list, default=None, metavar="ALPHA_S,A,B",
                   help="draw Gamma-Gamma sizes instead of log-normal")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--output", "-o", required=True, help="long-format CSV")
    p.add_argument("--truth-output", default=None, help="optional CSV of true item parameters")

    p = sub.add_parser("shrinkage-plot", help="MLE vs posterior scatter data and SVG")
    p.add_argument("--model", "-m", required=True, help="model file from 'fit'")
    p.add_argument("--output-dir", "-o", required=True, help="directory for shrinkage.csv/.svg")
    p.add_argument("--no-shrinkage", action="store_true",
                   help="debug: replace posteriors by per-item MLEs (no pooling)")
    return parser


# ---------------------------------------------------------------- commands


def _read_panel(args):
    try:
        return load_panel(args.input, args.format, gaps="fill",
                          delimiter=args.delimiter, frequency=args.frequency)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None


def cmd_preprocess(args) -> int:
    if args.transactions:
        if not Path(args.input).is_file():
            raise InputError(f"transaction file not found: {args.input}")
        raw = load_transactions(args.input, delimiter=args.delimiter,
                                frequency="weekly" if args.frequency == "weekly" else "daily")
    else:
        if not Path(args.input).is_file():
            raise InputError(f"panel file not found: {args.input}")
        raw = load_panel(args.input, args.format, gaps="keep",
                         delimiter=args.delimiter, frequency=args.frequency)
    clean = preprocess(raw, args.cap_quantile)
    write_panel(clean, args.output)
    print(f"wrote {len(clean)} series to {args.output}")
    return EXIT_OK


def cmd_fit(args) -> int:
    panel = _read_panel(args)
    if args.split_fraction is not None:
        panel, _ = split_fixed_origin(panel, SplitSpec(args.split_fraction), drop_short=True)
    model = TSBHB(variant=args.variant).fit(panel)
    save_model(model, args.model_out)
    occ, of = model.occurrence_hyper_, model.occurrence_fit_
    print(f"variant     {model.variant}")
    print(f"items       {len(model.ids_)}")
    print(f"mu_pi       {occ.mu_pi:.6f}")
    print(f"phi         {occ.phi:.6f}")
    print(f"occurrence  converged={of.converged} at_boundary={of.at_boundary}")
    h = model.size_hyper_
    if isinstance(h, GammaSizeHyper):
        print(f"alpha_s     {h.alpha_s:.6f}\na           {h.a:.6f}\nb           {h.b:.6f}")
        print(f"size        converged={model.size_fit_.converged} "
              f"at_boundary={model.size_fit_.at_boundary}")
    else:
        print(f"mu0         {h.mu0:.6f}\ntau2        {h.tau2:.6f}\nsigma2      {h.sigma2:.6f}")
        print(f"size        at_boundary={model.size_fit_.at_boundary}")
    print(f"wrote model to {args.model_out}")
    return EXIT_OK


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None


def cmd_forecast(args) -> int:
    model = _load_model(args.model)
    if args.horizon < 1:
        raise InputError("--horizon must be >= 1")
    qs = (0.10, 0.25, 0.50, 0.75, 0.90)
    lvl = args.level
    lo_q, hi_q = (1 - lvl) / 2, (1 + lvl) / 2
    mean = model.y_hat_
    if model.variant == "gamma":
        Q = np.full((len(mean), len(qs) + 2), np.nan)
    else:
        Q = model.predict_quantiles(qs + (lo_q, hi_q))
    tag = f"{100 * lvl:g}".replace(".", "_")
    with Path(args.output).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "period", "mean", "q10", "q25", "q50", "q75", "q90",
                    f"lo{tag}", f"hi{tag}"])
        for k, sid in enumerate(model.ids_):
            cells = ["" if np.isnan(v) else f"{v:.6f}" for v in Q[k]]
            for h in range(1, args.horizon + 1):
                w.writerow([sid, h, f"{mean[k]:.6f}", *cells])
    print(f"wrote {len(mean)} x {args.horizon} forecasts to {args.output}")
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            config = load_config(args.config)
        except FileNotFoundError as exc:
            raise InputError(str(exc)) from None
    else:
        config = ExperimentConfig()
    if args.input and not Path(args.input).is_file():
        raise InputError(f"panel file not found: {args.input}")
    config = config.with_overrides(
        data_path=str(Path(args.input).resolve()) if args.input else None,
        data_format=args.format,
        transactions=args.transactions,
        models=args.models,
        quantiles=args.quantiles,
        level=args.level,
        aggregation=args.aggregation,
        tsb_validation=args.tsb_validation,
        split_fraction=args.split_fraction,
        cap_quantile=args.cap_quantile,
        seed=args.seed,
        n_jobs=args.n_jobs,
        timing=args.timing,
        output_dir=args.output_dir,
    )
    if args.no_ablation:
        config = config.with_overrides(ablation=False)
    if config.data_path is not None and not Path(config.data_path).is_file():
        raise InputError(f"panel file not found: {config.data_path}")
    return config


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config)
    paths = write_report(report, config.output_dir)
    cols = ["model", "me", "mae", "rmse", "rmsse"]
    if len(report.main):
        print(report.main[cols].to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"wrote {len(paths)} report files to {config.output_dir}")
    failed = report.skipped[report.skipped["id"] == "*"]
    if len(failed):
        print("skipped models:")
        for _, row in failed.iterrows():
            print(f"  {row['model']}: {row['reason']}")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_segment(args) -> int:
    panel = _read_panel(args)
    if args.window == "in_sample":
        panel, _ = split_fixed_origin(panel, SplitSpec(args.split_fraction), drop_short=True)
    counts = dict.fromkeys(SEGMENTS, 0)
    with Path(args.output).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "adi", "cv2", "segment"])
        for s in panel:
            lab = classify(s.values)
            counts[lab.label] += 1
            w.writerow([s.id, "" if lab.adi is None else f"{lab.adi:.6f}",
                        "" if lab.cv2 is None else f"{lab.cv2:.6f}", lab.label])
    for seg, c in counts.items():
        print(f"{seg:<13}{c}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    gamma = None
    if args.gamma is not None:
        if len(args.gamma) != 3:
            raise InputError("--gamma needs three values ALPHA_S,A,B")
        gamma = GammaSizeHyper(*args.gamma)
    spec = SyntheticSpec(
        n_items=args.n_items,
        n_periods=args.n_periods,
        occurrence=OccurrenceHyper(args.mu_pi, args.phi),
        size=SizeHyper(args.mu0, args.tau2, args.sigma2),
        gamma_size=gamma,
        seed=args.seed,
    )
    sim = generate_panel(spec)
    write_panel(sim.panel, args.output)
    if args.truth_output:
        with Path(args.truth_output).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "pi", "latent", "mean_demand"])
            for sid, p, mu, md in zip(sim.panel.ids, sim.pi, sim.mu, sim.true_mean()):
                w.writerow([sid, f"{p:.6f}", f"{mu:.6f}", f"{md:.6f}"])
    print(f"wrote {len(sim.panel)} series to {args.output}")
    return EXIT_OK


def cmd_shrinkage_plot(args) -> int:
    model = _load_model(args.model)
    if args.no_shrinkage:
        model = TSBHB.from_state("mle_lognormal", model.stats_, model.occurrence_hyper_,
                                 model.size_hyper_)
    rep = shrinkage_report(model)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.table.to_csv(out / "shrinkage.csv", index=False, float_format="%.6f",
                     lineterminator="\n")
    t = rep.table
    write_scatter_svg(out / "shrinkage.svg", [
        (t["mle_p"].to_numpy(), t["post_p"].to_numpy(),
         f"occurrence probability (r = {fmt_stat(rep.occurrence_r)})"),
        (t["mle_size"].to_numpy(), t["post_size"].to_numpy(),
         f"demand size (r = {fmt_stat(rep.size_r)})"),
    ])
    print(f"occurrence  pearson_r={fmt_stat(rep.occurrence_r)} "
          f"variance_reduction_pct={fmt_stat(rep.occurrence_var_reduction, 2)}")
    print(f"size        pearson_r={fmt_stat(rep.size_r)} "
          f"variance_reduction_pct={fmt_stat(rep.size_var_reduction, 2)}")
    print(f"wrote {out / 'shrinkage.csv'} and {out / 'shrinkage.svg'}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "segment": cmd_segment,
    "simulate": cmd_simulate,
    "shrinkage-plot": cmd_shrinkage_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, FileNotFoundError, PanelFormatError, ModelFileError) as exc:
        print(f"tsbhb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError, NotImplementedError) as exc:
        print(f"tsbhb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
