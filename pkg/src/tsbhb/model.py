"""The TSB-HB forecaster: pooled occurrence times pooled size."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import ndtri
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_horizon, check_level, check_panel, check_quantile
from .occurrence import OccurrenceHyper, fit_occurrence, posterior_occurrence
from .panel import Panel, StatsTable, panel_stats
from .size import (
    fit_size_gamma,
    fit_size_reml,
    posterior_size_gamma,
    posterior_size_lognormal,
)

__all__ = [
    "TSBHB",
    "ItemPosterior",
    "PredictiveDistribution",
    "ShrinkageReport",
    "UnsupportedOperation",
    "VARIANTS",
    "shrinkage_report",
]

VARIANTS = ("lognormal", "gamma", "mle_lognormal")


class UnsupportedOperation(NotImplementedError):
    """Raised for distributional queries on the point-only Gamma variant."""


@dataclass(frozen=True)
class ItemPosterior:
    id: str
    pi_hat: float
    lam: float
    mu_hat: float
    v_mu: float
    w: float
    s_hat: float
    y_hat: float


@dataclass(frozen=True)
class PredictiveDistribution:
    """Zero-inflated log-normal: zero w.p. ``p_zero``, else LogNormal(log_mu, log_var)."""

    p_zero: float
    log_mu: float
    log_var: float

    @property
    def mean(self) -> float:
        return (1.0 - self.p_zero) * math.exp(self.log_mu + 0.5 * self.log_var)

    def quantile(self, q):
        return _zi_lognormal_quantile(q, 1.0 - self.p_zero, self.log_mu, self.log_var,
                                      p_zero=self.p_zero)

    def sample(self, size, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        occur = rng.random(size) >= self.p_zero
        draws = np.exp(self.log_mu + math.sqrt(self.log_var) * rng.standard_normal(size))
        return np.where(occur, draws, 0.0)


def _zi_lognormal_quantile(q, pi, log_mu, log_var, p_zero=None):
    # p_zero can be passed exactly; 1 - (1 - p) need not round-trip
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    p_zero = 1.0 - pi if p_zero is None else np.asarray(p_zero, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (q - p_zero) / pi
        val = np.exp(log_mu + ndtri(np.clip(inner, 0.0, 1.0)) * np.sqrt(log_var))
    return np.where(q <= p_zero, 0.0, val)


class TSBHB(BaseEstimator):
    """Hierarchical empirical-Bayes TSB forecaster for intermittent demand.

    The per-period forecast of item ``i`` is ``pi_hat_i * s_hat_i``: a
    Beta-Binomial posterior mean of the occurrence probability times the
    posterior predictive mean of the positive size. Both layers borrow
    strength across the panel through hyperparameters fitted once on the
    in-sample window.

    Parameters
    ----------
    variant : {"lognormal", "gamma", "mle_lognormal"}, default="lognormal"
        Size law. ``"gamma"`` is the conjugate Gamma-Gamma block (point
        forecasts only); ``"mle_lognormal"`` turns shrinkage off and uses
        per-item maximum-likelihood estimates.
    method : str, default="L-BFGS-B"
        Optimiser for the occurrence hyperparameters.
    maxiter : int, default=200
        Iteration cap for the occurrence optimiser.
    phi_bounds : tuple of float, default=(1e-4, 1e6)
        Clamp on the Beta prior precision.

    Attributes
    ----------
    ids_ : list of str
    stats_ : StatsTable
    occurrence_fit_ : OccurrenceFit
    size_fit_ : SizeFit, GammaSizeFit or None
    occurrence_hyper_ : OccurrenceHyper
    size_hyper_ : SizeHyper or GammaSizeHyper
    pi_hat_, lambda_, mu_hat_, v_mu_, w_, s_hat_, y_hat_, log_var_ : ndarray
    """

    def __init__(self, variant="lognormal", method="L-BFGS-B", maxiter=200,
                 phi_bounds=(1e-4, 1e6)):
        self.variant = variant
        self.method = method
        self.maxiter = maxiter
        self.phi_bounds = phi_bounds

    # ------------------------------------------------------------ fitting

    def fit(self, X, y=None):
        """Fit hyperparameters and item posteriors on an in-sample panel."""
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        panel = check_panel(X)
        return self.fit_stats(panel_stats(panel))

    def fit_stats(self, stats: StatsTable):
        """Fit from precomputed sufficient statistics."""
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.stats_ = stats
        self.ids_ = list(stats.ids)
        self.occurrence_fit_ = fit_occurrence(
            stats.m, stats.n, method=self.method, maxiter=self.maxiter,
            phi_bounds=self.phi_bounds,
        )
        self.occurrence_hyper_ = self.occurrence_fit_.hyper
        if self.variant == "gamma":
            self.size_fit_ = fit_size_gamma(stats)
        else:
            self.size_fit_ = fit_size_reml(stats)
        self.size_hyper_ = self.size_fit_.hyper
        self._set_posteriors()
        return self

    def _set_posteriors(self):
        stats = self.stats_
        occ = self.occurrence_hyper_
        pi_hat, lam = posterior_occurrence(occ, stats.m, stats.n)
        if self.variant == "gamma":
            s_hat = np.asarray(posterior_size_gamma(self.size_hyper_, stats), dtype=float)
            nan = np.full(len(stats), np.nan)
            mu, v, w, log_var = nan, nan, nan, nan
        elif self.variant == "lognormal":
            mu, v, w, s_hat = posterior_size_lognormal(self.size_hyper_, stats)
            log_var = self.size_hyper_.sigma2 + v
        else:
            pi_hat, lam, mu, v, w, s_hat, log_var = self._mle_posteriors(pi_hat)
        self.pi_hat_ = np.asarray(pi_hat, dtype=float)
        self.lambda_ = np.asarray(lam, dtype=float)
        self.mu_hat_ = np.asarray(mu, dtype=float)
        self.v_mu_ = np.asarray(v, dtype=float)
        self.w_ = np.asarray(w, dtype=float)
        self.s_hat_ = np.asarray(s_hat, dtype=float)
        self.log_var_ = np.asarray(log_var, dtype=float)
        self.y_hat_ = self.pi_hat_ * self.s_hat_
        self._rows = {sid: k for k, sid in enumerate(self.ids_)}

    def _mle_posteriors(self, pi_eb):
        stats = self.stats_
        m, n = stats.m.astype(float), stats.n.astype(float)
        pooled = pooled_size_moments(stats)
        pi_hat = np.where(n > 0, m / np.maximum(n, 1.0), pi_eb)
        lam = np.where(n > 0, 1.0, 0.0)
        mu = np.where(m > 0, stats.mean_log, pooled.mu0)
        log_var = np.where(m > 1, stats.var_log, pooled.sigma2)
        s_hat = np.exp(mu + 0.5 * log_var)
        v = np.zeros_like(mu)
        w = np.where(m > 0, 1.0, 0.0)
        return pi_hat, lam, mu, v, w, s_hat, log_var

    # -------------------------------------------------------- forecasting

    def _row(self, sid: str) -> int:
        check_is_fitted(self, "y_hat_")
        try:
            return self._rows[sid]
        except KeyError:
            raise KeyError(f"unknown series id {sid!r}") from None

    def _rows_for(self, ids) -> np.ndarray:
        check_is_fitted(self, "y_hat_")
        if ids is None:
            return np.arange(len(self.ids_))
        if isinstance(ids, Panel):
            ids = ids.ids
        return np.array([self._row(i) for i in ids], dtype=np.int64)

    def predict(self, X=None, horizon: int = 1) -> np.ndarray:
        """Flat mean forecasts, shape ``(n_items, horizon)``.

        ``X`` selects items: a Panel, a sequence of ids, or None for all
        fitted items in fit order.
        """
        horizon = check_horizon(horizon)
        rows = self._rows_for(X)
        return np.repeat(self.y_hat_[rows, None], horizon, axis=1)

    def forecast_mean(self, sid: str, horizon: int) -> np.ndarray:
        horizon = check_horizon(horizon)
        return np.full(horizon, self.y_hat_[self._row(sid)])

    def _check_distributional(self):
        check_is_fitted(self, "y_hat_")
        if self.variant == "gamma":
            raise UnsupportedOperation("the gamma variant provides point forecasts only")

    def predictive_distribution(self, sid: str) -> PredictiveDistribution:
        self._check_distributional()
        k = self._row(sid)
        return PredictiveDistribution(
            1.0 - float(self.pi_hat_[k]), float(self.mu_hat_[k]), float(self.log_var_[k])
        )

    def forecast_quantile(self, sid: str, q: float) -> float:
        """Quantile ``q`` of the zero-inflated log-normal predictive law."""
        self._check_distributional()
        q = check_quantile(q)
        k = self._row(sid)
        return float(
            _zi_lognormal_quantile(q, self.pi_hat_[k], self.mu_hat_[k], self.log_var_[k])
        )

    def forecast_interval(self, sid: str, level: float = 0.8):
        level = check_level(level)
        return (
            self.forecast_quantile(sid, (1.0 - level) / 2.0),
            self.forecast_quantile(sid, (1.0 + level) / 2.0),
        )

    def predict_quantiles(self, quantiles: Sequence[float], X=None) -> np.ndarray:
        """Quantile forecasts, shape ``(n_items, len(quantiles))``."""
        self._check_distributional()
        qs = np.array([check_quantile(q) for q in quantiles], dtype=float)
        rows = self._rows_for(X)
        return _zi_lognormal_quantile(
            qs[None, :],
            self.pi_hat_[rows, None],
            self.mu_hat_[rows, None],
            self.log_var_[rows, None],
        )

    def posterior(self, sid: str) -> ItemPosterior:
        k = self._row(sid)
        return ItemPosterior(
            id=sid,
            pi_hat=float(self.pi_hat_[k]),
            lam=float(self.lambda_[k]),
            mu_hat=float(self.mu_hat_[k]),
            v_mu=float(self.v_mu_[k]),
            w=float(self.w_[k]),
            s_hat=float(self.s_hat_[k]),
            y_hat=float(self.y_hat_[k]),
        )

    def posteriors_frame(self) -> pd.DataFrame:
        check_is_fitted(self, "y_hat_")
        return pd.DataFrame(
            {
                "id": self.ids_,
                "pi_hat": self.pi_hat_,
                "lambda": self.lambda_,
                "mu_hat": self.mu_hat_,
                "v_mu": self.v_mu_,
                "w": self.w_,
                "s_hat": self.s_hat_,
                "y_hat": self.y_hat_,
            }
        )

    @classmethod
    def from_state(cls, variant, stats: StatsTable, occurrence: OccurrenceHyper,
                   size, **params) -> "TSBHB":
        """Rebuild a fitted model from hyperparameters and statistics."""
        model = cls(variant=variant, **params)
        model.stats_ = stats
        model.ids_ = list(stats.ids)
        model.occurrence_fit_ = None
        model.size_fit_ = None
        model.occurrence_hyper_ = occurrence
        model.size_hyper_ = size
        model._set_posteriors()
        return model


@dataclass(frozen=True)
class _Pooled:
    mu0: float
    sigma2: float


def pooled_size_moments(stats: StatsTable) -> _Pooled:
    """Non-hierarchical pooled log-size mean and within-item variance."""
    m = stats.m.astype(float)
    pos = m > 0
    if not pos.any():
        return _Pooled(0.0, 1.0)
    mu0 = float(np.sum(stats.sum_log[pos]) / m[pos].sum())
    dof = float(np.sum(np.maximum(m[pos] - 1.0, 0.0)))
    if dof > 0:
        sigma2 = float(stats.within_ss.sum() / dof)
    else:
        ybar = stats.mean_log[pos]
        sigma2 = float(np.var(ybar, ddof=1)) if ybar.size > 1 else 1.0
    return _Pooled(mu0, sigma2 if sigma2 > 0 else 1.0)


# ------------------------------------------------------------ diagnostics


@dataclass(frozen=True)
class ShrinkageReport:
    """Per-item MLE-vs-posterior pairs plus correlation summaries.

    ``table`` has columns ``id, mle_p, post_p, mle_size, post_size``;
    undefined MLEs are NaN. Summary values are None when undefined.
    """

    table: pd.DataFrame
    occurrence_r: Optional[float]
    occurrence_var_reduction: Optional[float]
    size_r: Optional[float]
    size_var_reduction: Optional[float]

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "quantity": ["occurrence", "size"],
                "pearson_r": [self.occurrence_r, self.size_r],
                "variance_reduction_pct": [
                    self.occurrence_var_reduction,
                    self.size_var_reduction,
                ],
            }
        )


def _pair_summary(x, y):
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 2:
        return None, None
    vx, vy = np.var(x, ddof=1), np.var(y, ddof=1)
    r = float(np.corrcoef(x, y)[0, 1]) if vx > 0 and vy > 0 else None
    red = float(100.0 * (1.0 - vy / vx)) if vx > 0 else None
    return r, red


def shrinkage_report(model: TSBHB, min_items: int = 3) -> ShrinkageReport:
    """Compare per-item MLEs with the model's pooled estimates."""
    check_is_fitted(model, "y_hat_")
    stats = model.stats_
    n, m = stats.n.astype(float), stats.m.astype(float)
    mle_p = np.where(n > 0, m / np.maximum(n, 1.0), np.nan)
    mle_size = np.where(m > 1, np.exp(stats.mean_log + 0.5 * stats.var_log), np.nan)
    valid = np.isfinite(mle_p).sum()
    if valid < min_items:
        raise ValueError(f"need at least {min_items} items with defined MLEs, got {valid}")
    table = pd.DataFrame(
        {
            "id": model.ids_,
            "mle_p": mle_p,
            "post_p": model.pi_hat_,
            "mle_size": mle_size,
            "post_size": model.s_hat_,
        }
    )
    r_p, red_p = _pair_summary(mle_p, model.pi_hat_)
    r_s, red_s = _pair_summary(mle_size, model.s_hat_)
    return ShrinkageReport(table, r_p, red_p, r_s, red_s)
