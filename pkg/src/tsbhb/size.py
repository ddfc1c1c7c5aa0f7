"""Empirical-Bayes layers for positive demand sizes.

The default block is a Normal-Normal model on log sizes whose variance
components are estimated by REML on per-item aggregates. The Gamma-Gamma
block is the conjugate alternative used for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .panel import SeriesStats, StatsTable

__all__ = [
    "SizeHyper",
    "SizePosterior",
    "SizeFit",
    "GammaSizeHyper",
    "GammaSizeFit",
    "SizeIdentificationError",
    "reml_objective",
    "fit_size_reml",
    "posterior_size_lognormal",
    "gamma_log_marginal",
    "fit_size_gamma",
    "posterior_size_gamma",
]

LOG_RHO_BOUNDS = (-30.0, 30.0)
GAMMA_BOUNDS = (1e-4, 1e8)


class SizeIdentificationError(ValueError):
    """Raised when the size variance components cannot be identified."""


@dataclass(frozen=True)
class SizeHyper:
    mu0: float
    tau2: float
    sigma2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.mu0, self.tau2, self.sigma2)):
            raise ValueError("size hyperparameters must be finite")
        if self.tau2 < 0:
            raise ValueError(f"tau2 must be >= 0, got {self.tau2}")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")


@dataclass(frozen=True)
class SizePosterior:
    mu_hat: float
    v_mu: float
    w: float
    s_hat: float


@dataclass(frozen=True)
class SizeFit:
    hyper: SizeHyper
    objective: float
    at_boundary: bool
    n_items: int


@dataclass(frozen=True)
class GammaSizeHyper:
    """Gamma sizes with shared shape and Gamma-distributed item rates."""

    alpha_s: float
    a: float
    b: float

    def __post_init__(self):
        if not all(math.isfinite(v) and v > 0 for v in (self.alpha_s, self.a, self.b)):
            raise ValueError("alpha_s, a and b must be finite and positive")


@dataclass(frozen=True)
class GammaSizeFit:
    hyper: GammaSizeHyper
    log_marginal: float
    converged: bool
    at_boundary: bool
    message: str = ""


# ------------------------------------------------------------------ REML


def _aggregates(stats):
    """(m, item mean, within-SS) for items with m > 0."""
    if isinstance(stats, StatsTable):
        keep = stats.m > 0
        return (
            stats.m[keep].astype(float),
            stats.mean_log[keep],
            stats.within_ss[keep],
        )
    rows = [s for s in stats if s.m > 0]
    m = np.array([s.m for s in rows], dtype=float)
    mean = np.array([s.mean_log_size for s in rows], dtype=float)
    ss = np.array(
        [(s.m - 1) * s.var_log_size if s.m > 1 else 0.0 for s in rows], dtype=float
    )
    return m, mean, ss


def _profile(rho, m, ybar, W):
    """Profiled REML log-likelihood at variance ratio rho = tau2/sigma2.

    Returns (value, mu0, sigma2). Constants are dropped.
    """
    c = rho + 1.0 / m
    wts = 1.0 / c
    sw = wts.sum()
    mu0 = float(np.dot(wts, ybar) / sw)
    Q = float(np.dot(wts, (ybar - mu0) ** 2))
    dof = m.sum() - 1.0
    sigma2 = (W.sum() + Q) / dof
    val = -0.5 * (dof * math.log(sigma2) + dof + np.log(c).sum() + math.log(sw))
    return float(val), mu0, float(sigma2)


def reml_objective(tau2: float, sigma2: float, stats) -> float:
    """Restricted log-likelihood of the one-way random-intercept model.

    Evaluated on per-item aggregates with the panel mean profiled out by
    generalised least squares. Additive constants are dropped, the same way
    as in :func:`fit_size_reml`, so values are directly comparable.
    """
    m, ybar, W = _aggregates(stats)
    if sigma2 <= 0 or tau2 < 0:
        return -math.inf
    v = tau2 + sigma2 / m
    wts = 1.0 / v
    mu0 = np.dot(wts, ybar) / wts.sum()
    dof_w = (m - 1.0).sum()
    return float(
        -0.5
        * (
            dof_w * math.log(sigma2)
            + W.sum() / sigma2
            + np.log(v).sum()
            + np.dot(wts, (ybar - mu0) ** 2)
            + math.log(wts.sum())
        )
    )


def fit_size_reml(stats, *, grid_points: int = 121) -> SizeFit:
    """REML estimates of ``(mu0, tau2, sigma2)`` for log sizes.

    The panel mean is profiled out, ``sigma2`` has a closed form given the
    ratio ``rho = tau2 / sigma2``, and ``log rho`` is searched on
    ``[-30, 30]``: a coarse grid first, then bounded Brent refinement around
    the best grid cell. A maximum at the lower end (or at ``rho = 0``) is
    reported as ``tau2 = 0``.

    Parameters
    ----------
    stats : StatsTable or iterable of SeriesStats
        Only items with ``m > 0`` are used.
    """
    m, ybar, W = _aggregates(stats)
    if m.size < 2:
        raise SizeIdentificationError("need at least two items with positive demand")
    if not np.any(m > 1):
        raise SizeIdentificationError(
            "every item has a single positive observation, so the within-item "
            "variance is unidentified; use the gamma variant or fix sigma2"
        )

    lo, hi = LOG_RHO_BOUNDS
    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([_profile(math.exp(g), m, ybar, W)[0] for g in grid])
    k = int(np.argmax(vals))
    best_x, best_val = grid[k], vals[k]
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    if b > a:
        res = optimize.minimize_scalar(
            lambda g: -_profile(math.exp(g), m, ybar, W)[0],
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if -res.fun > best_val:
            best_x, best_val = float(res.x), -float(res.fun)

    zero_val, zero_mu, zero_s2 = _profile(0.0, m, ybar, W)
    if zero_val >= best_val or best_x <= lo + 1e-6:
        hyper = SizeHyper(zero_mu, 0.0, zero_s2)
        return SizeFit(hyper, zero_val, True, int(m.size))

    val, mu0, sigma2 = _profile(math.exp(best_x), m, ybar, W)
    hyper = SizeHyper(mu0, math.exp(best_x) * sigma2, sigma2)
    return SizeFit(hyper, val, bool(best_x >= hi - 1e-6), int(m.size))


def posterior_size_lognormal(hyper: SizeHyper, stats):
    """Shrunken log-size mean, its posterior variance and the predictive mean.

    Accepts one :class:`SeriesStats` (returns a :class:`SizePosterior`) or a
    :class:`StatsTable` (returns arrays ``mu_hat, v_mu, w, s_hat``). Items
    with ``m = 0`` get the prior: ``(mu0, tau2)`` and ``w = 0``.
    """
    if isinstance(stats, SeriesStats):
        m = stats.m
        denom = m * hyper.tau2 + hyper.sigma2
        w = m * hyper.tau2 / denom
        v = hyper.sigma2 * hyper.tau2 / denom
        if m > 0:
            mu = w * stats.mean_log_size + (1.0 - w) * hyper.mu0
        else:
            mu, v, w = hyper.mu0, hyper.tau2, 0.0
        return SizePosterior(mu, v, w, math.exp(mu + 0.5 * (hyper.sigma2 + v)))

    m = stats.m.astype(float)
    denom = m * hyper.tau2 + hyper.sigma2
    w = m * hyper.tau2 / denom
    v = hyper.sigma2 * hyper.tau2 / denom
    ybar = np.where(stats.m > 0, stats.mean_log, hyper.mu0)
    mu = np.where(stats.m > 0, w * ybar + (1.0 - w) * hyper.mu0, hyper.mu0)
    v = np.where(stats.m > 0, v, hyper.tau2)
    w = np.where(stats.m > 0, w, 0.0)
    return mu, v, w, np.exp(mu + 0.5 * (hyper.sigma2 + v))


# ------------------------------------------------------------ Gamma-Gamma


def _gamma_aggregates(stats):
    if isinstance(stats, StatsTable):
        keep = stats.m > 0
        return stats.m[keep].astype(float), stats.sum_size[keep], stats.sum_log[keep]
    rows = [s for s in stats if s.m > 0]
    return (
        np.array([s.m for s in rows], dtype=float),
        np.array([s.sum_size for s in rows], dtype=float),
        np.array([s.sum_log_size for s in rows], dtype=float),
    )


def _gamma_ll(alpha_s, a, b, m, S, L):
    return float(
        np.sum(
            (alpha_s - 1.0) * L
            - m * gammaln(alpha_s)
            + a * math.log(b)
            - gammaln(a)
            + gammaln(a + m * alpha_s)
            - (a + m * alpha_s) * np.log(b + S)
        )
    )


def gamma_log_marginal(hyper: GammaSizeHyper, stats) -> float:
    """Compound-Gamma log marginal likelihood of all positive sizes."""
    m, S, L = _gamma_aggregates(stats)
    return _gamma_ll(hyper.alpha_s, hyper.a, hyper.b, m, S, L)


def _gamma_start(m, S, L, sizes_var: Optional[float]) -> np.ndarray:
    means = S / m
    pooled_mean = S.sum() / m.sum()
    # shape from the mean log deviation: log(mean) - mean(log) ~ 1/(2 alpha)
    gap = np.log(means) - L / m
    multi = m > 1
    g = float(np.average(gap[multi], weights=m[multi])) if multi.any() else 0.0
    alpha_s = 1.0 / (2.0 * g) if g > 1e-12 else GAMMA_BOUNDS[1]
    if sizes_var is not None and sizes_var > 0 and not math.isfinite(alpha_s):
        alpha_s = pooled_mean**2 / sizes_var
    alpha_s = float(np.clip(alpha_s, 1e-2, 1e6))
    rates = alpha_s / means
    r_mean, r_var = rates.mean(), rates.var()
    a = r_mean**2 / r_var if r_var > 0 else 1e6
    a = float(np.clip(a, 1.5, 1e6))
    b = a / r_mean
    return np.log([alpha_s, a, b])


def fit_size_gamma(stats, *, maxiter: int = 500) -> GammaSizeFit:
    """Marginal maximum likelihood for the Gamma-Gamma size block.

    Sizes are ``Gamma(alpha_s, rate=beta_i)`` with ``beta_i ~ Gamma(a,
    rate=b)``; the three log-parameters are optimised with L-BFGS-B inside
    ``[1e-4, 1e8]`` from a moment-based start.
    """
    m, S, L = _gamma_aggregates(stats)
    if m.size < 2:
        raise SizeIdentificationError("need at least two items with positive demand")

    x0 = _gamma_start(m, S, L, None)
    lo, hi = math.log(GAMMA_BOUNDS[0]), math.log(GAMMA_BOUNDS[1])
    bounds = [(lo, hi)] * 3

    def nll(x):
        al, a, b = np.exp(x)
        return -_gamma_ll(al, a, b, m, S, L)

    # coordinates can be badly scaled, so polish with Nelder-Mead
    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10})
    res2 = optimize.minimize(nll, res.x, method="Nelder-Mead", bounds=bounds,
                             options={"maxiter": maxiter * 4, "xatol": 1e-10, "fatol": 1e-12})
    cands = [(float(nll(x0)), x0), (float(res.fun), res.x), (float(res2.fun), res2.x)]
    fx, x = min(cands, key=lambda c: c[0])
    ok = bool(res.success or res2.success)
    x = np.clip(x, lo, hi)
    at_boundary = bool(np.any(np.isclose(x, lo, atol=1e-3) | np.isclose(x, hi, atol=1e-3)))
    al, a, b = (float(v) for v in np.exp(x))
    return GammaSizeFit(GammaSizeHyper(al, a, b), -fx, ok and not at_boundary,
                        at_boundary, str(res2.message))


def posterior_size_gamma(hyper: GammaSizeHyper, stats):
    """Posterior predictive mean size ``alpha_s (b + sum s) / (a + m alpha_s - 1)``.

    Accepts a :class:`SeriesStats` (returns a float) or a :class:`StatsTable`
    (returns an array).
    """
    if isinstance(stats, SeriesStats):
        shape = hyper.a + stats.m * hyper.alpha_s
        if shape <= 1.0:
            raise ValueError(
                f"posterior mean undefined: a + m*alpha_s = {shape:.6g} <= 1"
            )
        return hyper.alpha_s * (hyper.b + stats.sum_size) / (shape - 1.0)
    shape = hyper.a + stats.m * hyper.alpha_s
    if np.any(shape <= 1.0):
        raise ValueError("posterior mean undefined for items with a + m*alpha_s <= 1")
    return hyper.alpha_s * (hyper.b + stats.sum_size) / (shape - 1.0)
