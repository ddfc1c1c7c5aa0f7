import math

import numpy as np
import pytest
from oracles import coverage_aiw_loop, pinball_loop, point_metrics_loop

from tsbhb.metrics import (
    SeriesEval,
    aggregate,
    coverage_aiw,
    mean_pinball,
    pinball_loss,
    point_metrics,
)


def test_point_metrics_example():
    pm = point_metrics([0, 0, 3], [1, 1, 1], scale=2.0)
    assert pm.me == pytest.approx(0.0, abs=1e-15)
    assert pm.mae == pytest.approx(4 / 3, abs=1e-15)
    assert pm.rmse == pytest.approx(math.sqrt(2), abs=1e-15)
    assert pm.rmsse == pytest.approx(0.7071, abs=1e-4)


def test_sign_convention_forecast_minus_actual():
    assert point_metrics([2.0], [3.0]).me == 1.0


def test_perfect_forecast_and_absent_scale():
    pm = point_metrics([1, 2, 3], [1, 2, 3], scale=1.0)
    assert (pm.me, pm.mae, pm.rmse, pm.rmsse) == (0.0, 0.0, 0.0, 0.0)
    pm = point_metrics([0, 0, 3], [1, 1, 1])
    assert pm.rmsse is None and pm.mae == pytest.approx(4 / 3)


def test_point_metrics_errors():
    with pytest.raises(ValueError):
        point_metrics([1, 2], [1])
    with pytest.raises(ValueError):
        point_metrics([1], [1], scale=0.0)


def test_pinball_examples():
    assert pinball_loss(4, 2, 0.5) == 1.0
    assert pinball_loss(0, 2, 0.9) == pytest.approx(0.2)
    for q in (0.1, 0.5, 0.9):
        assert pinball_loss(3.3, 3.3, q) == 0.0
    with pytest.raises(ValueError):
        pinball_loss(1, 1, 1.0)


def test_coverage_examples():
    assert coverage_aiw([0, 5], [0, 4], [3, 6]) == (1.0, 2.5)
    assert coverage_aiw([1, 2], [1, 2], [1, 2]) == (1.0, 0.0)
    with pytest.raises(ValueError):
        coverage_aiw([1], [2], [1])


def test_brute_force_oracles_on_random_arrays():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        y = np.where(rng.random(n) < 0.5, rng.gamma(2, 3, n), 0.0)
        f = rng.gamma(1.5, 2, n)
        scale = float(rng.uniform(0.1, 5))
        pm = point_metrics(y, f, scale)
        ref = point_metrics_loop(y, f, scale)
        assert np.allclose([pm.me, pm.mae, pm.rmse, pm.rmsse], ref, rtol=1e-12, atol=1e-12)
        q = float(rng.uniform(0.01, 0.99))
        assert np.mean(pinball_loss(y, f, q)) == pytest.approx(pinball_loop(y, f, q), rel=1e-12, abs=1e-12)
        lo = f * rng.uniform(0, 1, n)
        hi = f + rng.uniform(0, 3, n)
        assert coverage_aiw(y, lo, hi) == pytest.approx(coverage_aiw_loop(y, lo, hi), rel=1e-12, abs=1e-12)


def test_median_pinball_is_half_absolute_error():
    rng = np.random.default_rng(1)
    y = rng.normal(size=1000) * 10
    f = rng.normal(size=1000) * 10
    assert np.array_equal(pinball_loss(y, f, 0.5), np.abs(y - f) / 2)


def test_mean_pinball_per_quantile():
    out = mean_pinball([0, 4], {0.5: [2, 2], 0.9: [0, 0]})
    assert out[0.5] == pytest.approx(1.0)
    assert out[0.9] == pytest.approx(0.9 * 4 / 2)


def _se(sid, y, f, scale=None, **kw):
    return SeriesEval(sid, np.asarray(y, float), np.asarray(f, float), scale, **kw)


def test_aggregate_single_series_modes_agree():
    s = _se("a", [0, 0, 3], [1, 1, 1], 2.0)
    a, b = aggregate([s], "per_point"), aggregate([s], "per_series")
    for k in ("me", "mae", "rmse", "rmsse"):
        assert a[k] == pytest.approx(b[k], abs=1e-15)


def test_aggregate_per_series_is_mean():
    s1 = _se("a", [0, 0, 3], [1, 1, 1], 2.0)
    s2 = _se("b", [1, 1], [1, 3], 1.0)
    row = aggregate([s1, s2], "per_series")
    assert row["mae"] == pytest.approx((4 / 3 + 1) / 2)
    assert row["rmse"] == pytest.approx((math.sqrt(2) + math.sqrt(2)) / 2)


def test_aggregate_per_point_pools():
    s1 = _se("a", [0, 0, 3], [1, 1, 1], 2.0)
    s2 = _se("b", [1, 1], [1, 3], 1.0)
    row = aggregate([s1, s2])
    assert row["mae"] == pytest.approx((1 + 1 + 2 + 0 + 2) / 5)
    scaled = np.r_[np.array([1, 1, -2]) / 2.0, np.array([0, 2]) / 1.0]
    assert row["rmsse"] == pytest.approx(math.sqrt(np.mean(scaled ** 2)))


def test_aggregate_excludes_missing_scale():
    s1 = _se("a", [0, 0, 3], [1, 1, 1], 2.0)
    s2 = _se("b", [1, 1], [1, 3], None)
    for mode in ("per_point", "per_series"):
        row = aggregate([s1, s2], mode)
        assert row["rmsse_excluded"] == 1
        assert row["rmsse"] == pytest.approx(math.sqrt(2) / 2)
    row = aggregate([s2])
    assert row["rmsse"] is None


def test_aggregate_probabilistic():
    s = _se("a", [0, 5], [1, 1], 1.0, quantiles={0.5: np.array([0.0, 4.0])},
            lo=np.array([0.0, 4.0]), hi=np.array([3.0, 6.0]))
    row = aggregate([s])
    assert row["pinball"][0.5] == pytest.approx(0.25)
    assert row["mean_pinball"] == pytest.approx(0.25)
    assert (row["coverage"], row["aiw"]) == (1.0, 2.5)


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([_se("a", [1], [1])], "weird")
