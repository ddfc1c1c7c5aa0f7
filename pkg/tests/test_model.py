import math

import numpy as np
import pytest
from conftest import make_panel
from oracles import zi_lognormal_quantile_bisect
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tsbhb.model import (
    TSBHB,
    PredictiveDistribution,
    UnsupportedOperation,
    shrinkage_report,
)
from tsbhb.occurrence import OccurrenceHyper
from tsbhb.panel import SplitSpec, StatsTable, SeriesStats, split_fixed_origin
from tsbhb.simulate import SyntheticSpec, generate_panel
from tsbhb.size import SizeHyper


@pytest.fixture(scope="module")
def sim():
    return generate_panel(SyntheticSpec(300, 90, seed=5))


@pytest.fixture(scope="module")
def fitted(sim):
    p_in, _ = split_fixed_origin(sim.panel)
    return TSBHB().fit(p_in)


def _state_model(rows, occ=OccurrenceHyper(0.2, 4.0), size=SizeHyper(1.0, 0.5, 0.8),
                 variant="lognormal"):
    table = StatsTable.from_stats([f"i{k}" for k in range(len(rows))], rows)
    return TSBHB.from_state(variant, table, occ, size)


# ----------------------------------------------------------------- fitting


def test_point_forecast_is_product(fitted):
    np.testing.assert_array_equal(fitted.y_hat_, fitted.pi_hat_ * fitted.s_hat_)
    post = fitted.posterior(fitted.ids_[3])
    assert post.y_hat == pytest.approx(post.pi_hat * post.s_hat, abs=1e-12)


def test_cold_start_composition():
    occ, size = OccurrenceHyper(0.2, 4.0), SizeHyper(1.0, 0.5, 0.8)
    model = _state_model([SeriesStats(n=30, m=0), SeriesStats(n=30, m=4, mean_log_size=1.2,
                                                             var_log_size=0.3)], occ, size)
    pi_cold = occ.alpha / (occ.alpha + occ.beta + 30)
    s_cold = math.exp(size.mu0 + 0.5 * (size.sigma2 + size.tau2))
    assert abs(model.pi_hat_[0] - pi_cold) <= 1e-12
    assert abs(model.s_hat_[0] - s_cold) <= 1e-12
    assert model.y_hat_[0] == pytest.approx(pi_cold * s_cold, abs=1e-12)


def test_dense_item_shrinkage_vanishes():
    size = SizeHyper(1.0, 0.5, 0.8)
    n, m, lbar = 10**7, 4 * 10**6, 2.5
    model = _state_model([SeriesStats(n=n, m=m, mean_log_size=lbar, var_log_size=0.8),
                          SeriesStats(n=5, m=0)], size=size)
    target = (m / n) * math.exp(lbar + size.sigma2 / 2)
    assert model.y_hat_[0] == pytest.approx(target, rel=1e-5)


def test_mixture_mean_identity(fitted):
    for sid in fitted.ids_[:50]:
        d = fitted.predictive_distribution(sid)
        k = fitted.ids_.index(sid)
        assert d.p_zero == pytest.approx(1 - fitted.pi_hat_[k], abs=1e-15)
        assert d.log_var == pytest.approx(fitted.size_hyper_.sigma2 + fitted.v_mu_[k], abs=1e-15)
        assert abs(d.mean - fitted.y_hat_[k]) <= 1e-10 * max(1.0, fitted.y_hat_[k])


def test_predict_shapes_and_selection(fitted):
    out = fitted.predict(horizon=4)
    assert out.shape == (len(fitted.ids_), 4)
    sel = fitted.predict([fitted.ids_[2], fitted.ids_[0]], horizon=1)
    assert sel[:, 0].tolist() == [fitted.y_hat_[2], fitted.y_hat_[0]]


def test_forecast_mean_examples(fitted):
    sid = fitted.ids_[0]
    y = fitted.y_hat_[0]
    assert fitted.forecast_mean(sid, 3).tolist() == [y, y, y]
    assert fitted.forecast_mean(sid, 1).tolist() == [y]
    with pytest.raises(ValueError):
        fitted.forecast_mean(sid, 0)
    with pytest.raises(KeyError):
        fitted.forecast_mean("nope", 1)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        TSBHB().predict()


def test_bad_variant():
    with pytest.raises(ValueError, match="variant"):
        TSBHB(variant="pareto").fit(make_panel([[1, 0, 2]]))


def test_sklearn_params_and_clone(fitted):
    est = TSBHB(variant="gamma", maxiter=50)
    assert est.get_params()["variant"] == "gamma"
    c = clone(fitted)
    assert c.get_params() == fitted.get_params()
    assert not hasattr(c, "y_hat_")


def test_determinism(sim):
    p_in, _ = split_fixed_origin(sim.panel)
    a = TSBHB().fit(p_in).predict()
    b = TSBHB().fit(p_in).predict()
    assert np.array_equal(a, b)


# --------------------------------------------------------------- quantiles


def test_quantile_examples():
    d = PredictiveDistribution(0.4, 1.0, 4.0)
    assert d.quantile(0.3) == 0.0
    assert d.quantile(0.7) == pytest.approx(math.e, rel=1e-12)
    assert zi_lognormal_quantile_bisect(0.7, 0.6, 1.0, 4.0) == pytest.approx(math.e, rel=1e-9)


def test_quantile_matches_bisection_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        pi = rng.uniform(0.01, 0.99)
        mu, var = rng.normal(0, 2), rng.uniform(0.01, 4)
        q = rng.uniform(0.01, 0.99)
        got = float(PredictiveDistribution(1 - pi, mu, var).quantile(q))
        assert got == pytest.approx(zi_lognormal_quantile_bisect(q, pi, mu, var), rel=1e-9, abs=1e-300)


def test_quantile_monotone_and_diverges():
    d = PredictiveDistribution(0.3, 0.5, 1.5)
    qs = np.linspace(0.001, 0.999999, 1000)
    vals = d.quantile(qs)
    assert np.all(np.diff(vals) >= 0)
    assert d.quantile(1 - 1e-12) > d.quantile(0.999) > d.quantile(0.99)


def test_quantile_against_monte_carlo():
    d = PredictiveDistribution(0.45, 0.8, 0.6)
    x = d.sample(400_000, rng=1)
    for q in (0.1, 0.3):
        assert d.quantile(q) == 0.0 and np.quantile(x, q) == 0.0
    for q in (0.5, 0.7, 0.9):
        # compare in probability space: F(quantile) vs q
        assert np.mean(x <= d.quantile(q)) == pytest.approx(q, abs=0.005)


def test_interval_rules(fitted):
    sid = fitted.ids_[1]
    lo, hi = fitted.forecast_interval(sid, 0.8)
    assert lo == fitted.forecast_quantile(sid, 0.1)
    assert hi == fitted.forecast_quantile(sid, 0.9)
    widths = [np.subtract(*fitted.forecast_interval(sid, lv)[::-1]) for lv in (0.95, 0.8, 0.5, 0.2)]
    assert all(a >= b for a, b in zip(widths, widths[1:]))


def test_degenerate_interval_for_rare_items():
    model = _state_model([SeriesStats(n=200, m=0), SeriesStats(n=10, m=5, mean_log_size=1.0,
                                                              var_log_size=0.2)],
                         occ=OccurrenceHyper(0.02, 5.0))
    assert model.pi_hat_[0] < 0.1
    assert model.forecast_interval("i0", 0.8) == (0.0, 0.0)


def test_predict_quantiles_matches_scalar(fitted):
    qs = [0.1, 0.5, 0.9]
    Q = fitted.predict_quantiles(qs)
    for k in (0, 7, 42):
        for j, q in enumerate(qs):
            assert Q[k, j] == fitted.forecast_quantile(fitted.ids_[k], q)


def test_gamma_variant_is_point_only(sim):
    p_in, _ = split_fixed_origin(sim.panel)
    g = TSBHB(variant="gamma").fit(p_in)
    assert np.all(g.y_hat_ > 0)
    with pytest.raises(UnsupportedOperation):
        g.forecast_quantile(g.ids_[0], 0.5)
    with pytest.raises(NotImplementedError):
        g.predict_quantiles([0.5])


# --------------------------------------------------------------------- MLE


def test_mle_variant_uses_raw_estimates(sim):
    p_in, _ = split_fixed_origin(sim.panel)
    model = TSBHB(variant="mle_lognormal").fit(p_in)
    st = model.stats_
    k = int(np.flatnonzero(st.m > 1)[0])
    assert model.pi_hat_[k] == pytest.approx(st.m[k] / st.n[k], abs=1e-15)
    assert model.mu_hat_[k] == st.mean_log[k] and model.v_mu_[k] == 0.0
    assert model.s_hat_[k] == pytest.approx(math.exp(st.mean_log[k] + st.var_log[k] / 2))
    cold = int(np.flatnonzero(st.m == 0)[0])
    assert np.isfinite(model.s_hat_[cold])


def test_mle_worse_on_sparse_items():
    sim = generate_panel(SyntheticSpec(500, 120, seed=21))
    p_in, p_oos = split_fixed_origin(sim.panel)
    hb = TSBHB().fit(p_in)
    mle = TSBHB(variant="mle_lognormal").fit(p_in)
    sparse = [s.id for s in p_in if 0 < (s.values > 0).sum() <= 3]
    assert len(sparse) > 50

    def mae(model):
        return np.mean([np.abs(p_oos[i].values - model.forecast_mean(i, 1)[0]).mean() for i in sparse])

    assert mae(mle) > mae(hb)


# --------------------------------------------------------------- shrinkage


def test_shrinkage_report_columns(fitted):
    rep = shrinkage_report(fitted)
    assert list(rep.table.columns) == ["id", "mle_p", "post_p", "mle_size", "post_size"]
    assert -1 <= rep.occurrence_r <= 1 and -1 <= rep.size_r <= 1
    assert rep.occurrence_var_reduction > 0
    assert rep.summary()["quantity"].tolist() == ["occurrence", "size"]


def test_shrinkage_identical_items_undefined():
    st = SeriesStats(n=20, m=5, mean_log_size=1.0, var_log_size=0.5)
    rep = shrinkage_report(_state_model([st, st, st]))
    assert rep.occurrence_r is None and rep.occurrence_var_reduction is None
    assert rep.size_r is None and rep.size_var_reduction is None


def test_shrinkage_flat_prior_limit():
    rows = [SeriesStats(n=40, m=m, mean_log_size=0.3 * m, var_log_size=0.5) for m in range(2, 12)]
    model = _state_model(rows, occ=OccurrenceHyper(0.3, 1e-9))
    rep = shrinkage_report(model)
    assert rep.occurrence_r == pytest.approx(1.0, abs=1e-9)
    assert rep.occurrence_var_reduction == pytest.approx(0.0, abs=1e-6)


def test_shrinkage_needs_three_items():
    st = SeriesStats(n=20, m=5, mean_log_size=1.0, var_log_size=0.5)
    with pytest.raises(ValueError, match="at least 3"):
        shrinkage_report(_state_model([st, st]))


def test_size_panel_shrinks_more_than_occurrence_on_sparse_data():
    sim = generate_panel(SyntheticSpec(1000, 90, OccurrenceHyper(0.08, 5.0), seed=3))
    p_in, _ = split_fixed_origin(sim.panel, SplitSpec(1 / 3))
    rep = shrinkage_report(TSBHB().fit(p_in))
    assert rep.size_r < rep.occurrence_r
