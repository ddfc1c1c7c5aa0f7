import time

import numpy as np
import pandas as pd
import pytest
from conftest import make_panel

from tsbhb.fileio import ExperimentConfig
from tsbhb.harness import (
    ablation,
    prepare_panels,
    run_experiment,
    timing_report,
    write_report,
)
from tsbhb.occurrence import OccurrenceHyper
from tsbhb.panel import DemandSeries, Panel, split_fixed_origin
from tsbhb.simulate import SyntheticSpec, generate_panel


def _cfg(**kw):
    kw.setdefault("n_jobs", 1)
    return ExperimentConfig(**kw)


@pytest.fixture(scope="module")
def panel():
    return generate_panel(SyntheticSpec(120, 60, seed=7)).panel


@pytest.fixture(scope="module")
def report(panel):
    return run_experiment(_cfg(), panel)


def test_every_model_reported(report):
    rows = set(report.main["model"])
    failed = set(report.skipped.loc[report.skipped["id"] == "*", "model"])
    assert rows | failed == set(ExperimentConfig().models)
    assert not report.partial


def test_only_hb_is_probabilistic(report):
    assert report.prob["model"].tolist() == ["tsb-hb"]
    others = report.main[report.main.model != "tsb-hb"]
    assert others["pinball_q50"].isna().all()
    assert {"coverage80", "aiw80", "mean_pinball"} <= set(report.main.columns)


def test_tables_present(report):
    assert len(report.grid_audit) == 100
    assert report.ablation["variant"].tolist() == [
        "TSB-HB-LogNormal", "TSB-HB-Gamma", "TSB-MLE-LogNormal"]
    assert len(report.shrinkage) == 120
    assert report.segments["count"].groupby(report.segments["model"]).sum().eq(120).all()
    assert set(report.hyperparameters) == {"mu_pi", "phi", "mu0", "tau2", "sigma2"}


def test_ablation_lognormal_matches_main_table(report):
    hb = report.main.set_index("model").loc["tsb-hb"]
    row = report.ablation.set_index("variant").loc["TSB-HB-LogNormal"]
    assert row["mae"] == pytest.approx(hb["mae"], rel=1e-12)


def _shuffle_oos(panel, frac=1 / 3, seed=0):
    # permuting each held-out window keeps the panel-wide cap unchanged
    rng = np.random.default_rng(seed)
    p_in, p_oos = split_fixed_origin(panel)
    series = []
    for s in panel:
        k = len(p_in[s.id])
        tail = s.values[k:].copy()
        rng.shuffle(tail)
        if np.array_equal(tail, s.values[k:]):
            tail = tail[::-1]
        series.append(DemandSeries(s.id, np.r_[s.values[:k], tail]))
    return Panel(tuple(series), panel.frequency)


def test_no_leakage_from_held_out_values(panel):
    cfg = _cfg(tsb_validation="honest", ablation=False)
    a = run_experiment(cfg, panel)
    b = run_experiment(cfg, _shuffle_oos(panel))
    for name in cfg.models:
        for sid, ev in a.results[name].items():
            assert np.array_equal(ev.forecasts, b.results[name][sid].forecasts), (name, sid)
    assert a.hyperparameters == b.hyperparameters


def test_faithful_tsb_reads_held_out_window(panel):
    a = run_experiment(_cfg(models=("tsb",), ablation=False), panel)
    b = run_experiment(_cfg(models=("tsb",), ablation=False), _shuffle_oos(panel, seed=3))
    # same multiset of validation values per series: audit MAE is unchanged
    np.testing.assert_allclose(a.grid_audit["mae"], b.grid_audit["mae"], rtol=1e-12)


def test_honest_validation_differs_from_faithful(panel):
    f = run_experiment(_cfg(models=("tsb",), ablation=False), panel)
    h = run_experiment(_cfg(models=("tsb",), ablation=False, tsb_validation="honest"), panel)
    assert len(h.grid_audit) == 100
    assert not np.allclose(f.grid_audit["mae"], h.grid_audit["mae"])


def test_empty_and_unknown_models(panel):
    with pytest.raises(ValueError, match="empty"):
        run_experiment(_cfg(models=()), panel)
    with pytest.raises(ValueError, match="unknown"):
        run_experiment(_cfg(models=("arima",)), panel)


def test_unknown_ablation_variant(panel):
    with pytest.raises(ValueError, match="unknown ablation"):
        ablation(_cfg(), ["TSB-HB-Weibull"], panel=panel)


def test_dense_panel_hb_matches_mle():
    panel = generate_panel(SyntheticSpec(200, 300, OccurrenceHyper(0.85, 100.0), seed=1)).panel
    _, p_in, _, _ = prepare_panels(_cfg(), panel)
    assert min((s.values > 0).sum() for s in p_in) >= 50
    t = ablation(_cfg(), panel=panel).set_index("variant")
    assert t.loc["TSB-HB-LogNormal", "mae"] == pytest.approx(t.loc["TSB-MLE-LogNormal", "mae"], rel=0.01)


def test_sparse_panel_mle_worse():
    panel = generate_panel(SyntheticSpec(400, 90, OccurrenceHyper(0.05, 5.0), seed=2)).panel
    t = ablation(_cfg(), panel=panel).set_index("variant")
    assert t.loc["TSB-MLE-LogNormal", "mae"] > t.loc["TSB-HB-LogNormal", "mae"]


def test_single_item_panel_runs():
    # size hyperparameters need two items, so HB is skipped but the run completes
    panel = make_panel([[0, 2, 0, 0, 3, 1, 0, 0, 2, 0, 1, 0]])
    rep = run_experiment(_cfg(), panel)
    assert rep.partial
    assert "tsb-hb" in set(rep.skipped.loc[rep.skipped.id == "*", "model"])
    assert {"croston", "sba", "tsb", "adida", "imapa"} <= set(rep.main["model"])
    assert rep.shrinkage.empty


def test_short_series_listed_and_dropped():
    panel = make_panel([[0, 2, 0, 1, 0, 3], [5]] + [[1, 0, 2, 0, 0, 1]] * 3)
    rep = run_experiment(_cfg(models=("tsb-hb", "croston"), ablation=False), panel)
    short = rep.skipped[rep.skipped["model"] == "*"]
    assert short["id"].tolist() == ["s1"]
    assert rep.main["n_series"].eq(4).all()


def test_all_zero_series_flagged_for_croston():
    panel = make_panel([[0] * 9, [0, 2, 0, 1, 0, 3, 0, 1, 0], [1, 0, 2, 0, 0, 1, 0, 3, 1]])
    rep = run_experiment(_cfg(models=("croston", "tsb-hb"), ablation=False), panel)
    flagged = rep.skipped[(rep.skipped.model == "croston") & (rep.skipped.id == "s0")]
    assert len(flagged) == 1
    assert rep.results["croston"]["s0"].forecasts.tolist() == [0.0] * 6


def test_failed_model_marks_partial(monkeypatch, panel):
    import tsbhb.harness as h

    def boom(*a, **k):
        raise RuntimeError("forced")

    monkeypatch.setattr(h, "Croston", boom)
    rep = run_experiment(_cfg(models=("tsb-hb", "croston"), ablation=False), panel)
    assert rep.partial
    assert rep.skipped.query("model == 'croston'")["reason"].str.contains("forced").all()
    assert rep.main["model"].tolist() == ["tsb-hb"]


def test_synthetic_fallback_without_data():
    cfg = _cfg(synthetic_items=30, synthetic_periods=30, models=("tsb-hb",), ablation=False, seed=5)
    rep = run_experiment(cfg)
    assert rep.main["n_series"].iloc[0] == 30


def test_per_series_aggregation(panel):
    a = run_experiment(_cfg(models=("croston",), ablation=False), panel)
    b = run_experiment(_cfg(models=("croston",), ablation=False, aggregation="per_series"), panel)
    ev = a.results["croston"].values()
    assert b.main["mae"].iloc[0] == pytest.approx(np.mean([e.point().mae for e in ev]))


def test_timing_report_stages(panel):
    p_in = split_fixed_origin(panel)[0]
    t = timing_report(p_in)
    assert t["stage"].tolist() == ["stats", "hyper_fit", "posterior", "forecast", "total"]
    assert (t["seconds"] >= 0).all()
    assert t["seconds"].iloc[-1] == pytest.approx(t["seconds"].iloc[:-1].sum())
    assert timing_report(p_in, "gamma")["items"].eq(len(p_in)).all()


def test_written_reports_are_deterministic(tmp_path, panel):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    write_report(run_experiment(_cfg(), panel), out_a)
    write_report(run_experiment(_cfg(), panel), out_b)
    names = sorted(p.name for p in out_a.iterdir())
    assert "timing.csv" not in names and "main_metrics.csv" in names
    for name in names:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    main = pd.read_csv(out_a / "main_metrics.csv")
    assert main.columns[:5].tolist() == ["model", "me", "mae", "rmse", "rmsse"]


def test_parallel_matches_serial(panel):
    a = run_experiment(_cfg(ablation=False), panel)
    b = run_experiment(_cfg(ablation=False, n_jobs=2), panel)
    pd.testing.assert_frame_equal(a.main, b.main)


def test_bundled_config_is_fast(example_config_path):
    from tsbhb.fileio import load_config

    t0 = time.perf_counter()
    rep = run_experiment(load_config(example_config_path).with_overrides(n_jobs=1))
    assert time.perf_counter() - t0 < 10
    assert rep.main["n_series"].iloc[0] == 50
