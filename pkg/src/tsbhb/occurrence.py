"""Beta-Binomial empirical-Bayes layer for demand occurrence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import betaln, digamma, expit, logit

__all__ = [
    "OccurrenceHyper",
    "OccurrencePosterior",
    "OccurrenceFit",
    "bb_log_marginal",
    "fit_occurrence",
    "posterior_occurrence",
    "moment_start",
]

PHI_BOUNDS = (1e-4, 1e6)
_TIGHT = {"L-BFGS-B": {"ftol": 1e-14, "gtol": 1e-9}}
MU_BOUNDS = (1e-8, 1.0 - 1e-8)


@dataclass(frozen=True)
class OccurrenceHyper:
    """Beta prior in mean-precision form."""

    mu_pi: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_pi) and math.isfinite(self.phi)):
            raise ValueError("occurrence hyperparameters must be finite")
        if not 0.0 < self.mu_pi < 1.0:
            raise ValueError(f"mu_pi must lie in (0, 1), got {self.mu_pi}")
        if self.phi <= 0:
            raise ValueError(f"phi must be positive, got {self.phi}")

    @property
    def alpha(self) -> float:
        return self.mu_pi * self.phi

    @property
    def beta(self) -> float:
        return (1.0 - self.mu_pi) * self.phi

    @classmethod
    def from_alpha_beta(cls, alpha: float, beta: float) -> "OccurrenceHyper":
        return cls(alpha / (alpha + beta), alpha + beta)


@dataclass(frozen=True)
class OccurrencePosterior:
    pi_hat: float
    lam: float


@dataclass(frozen=True)
class OccurrenceFit:
    """Result of :func:`fit_occurrence`."""

    hyper: OccurrenceHyper
    log_marginal: float
    converged: bool
    at_boundary: bool
    n_iter: int
    message: str = ""


def bb_log_marginal(hyper: OccurrenceHyper, m, n) -> float:
    """Beta-Binomial log marginal likelihood, binomial coefficients dropped.

    Sums ``lnB(m + a, n - m + b) - lnB(a, b)`` over items. Items with
    ``n = 0`` contribute exactly zero.
    """
    a, b = hyper.alpha, hyper.beta
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("non-finite hyperparameters")
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(m < 0) or np.any(m > n):
        raise ValueError("need 0 <= m <= n for every item")
    return float(np.sum(betaln(m + a, n - m + b) - betaln(a, b)))


def _neg_loglik_and_grad(theta, m, n):
    # theta = (logit mu, log phi)
    mu = expit(theta[0])
    phi = math.exp(theta[1])
    a, b = mu * phi, (1.0 - mu) * phi
    ll = np.sum(betaln(m + a, n - m + b)) - m.size * betaln(a, b)
    dg_ab = digamma(n + phi) - digamma(phi)
    da = np.sum(digamma(m + a) - dg_ab) - m.size * digamma(a)
    db = np.sum(digamma(n - m + b) - dg_ab) - m.size * digamma(b)
    # chain rule: a = mu*phi, b = (1-mu)*phi
    dmu = (da - db) * phi * mu * (1.0 - mu)
    dphi = (da * mu + db * (1.0 - mu)) * phi
    return -ll, -np.array([dmu, dphi])


def moment_start(m, n) -> OccurrenceHyper:
    """Method-of-moments start from per-item frequencies ``m / n``."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    keep = n > 0
    p = m[keep] / n[keep]
    mu = float(np.clip(p.mean(), 1e-3, 1.0 - 1e-3))
    if p.size < 2:
        return OccurrenceHyper(mu, 1e3)
    inv_n = float(np.mean(1.0 / n[keep]))
    # Var(m/n) = mu(1-mu) [1/n + (1 - 1/n) rho], rho = 1 / (1 + phi)
    ratio = float(p.var(ddof=1)) / (mu * (1.0 - mu))
    rho = (ratio - inv_n) / max(1.0 - inv_n, 1e-12)
    phi = 1.0 / rho - 1.0 if rho > 0 else np.inf
    return OccurrenceHyper(mu, float(np.clip(phi, 0.5, 1e3)))


def fit_occurrence(
    m,
    n,
    *,
    method: str = "L-BFGS-B",
    maxiter: int = 200,
    phi_bounds=PHI_BOUNDS,
) -> OccurrenceFit:
    """Maximum marginal likelihood for the Beta prior on occurrence.

    Optimises over ``(logit mu_pi, log phi)`` inside a box, starting from
    :func:`moment_start`. Items with ``n = 0`` carry no information and are
    ignored. The returned point never scores below the starting point.

    Parameters
    ----------
    m, n : array-like of int
        Positive-period counts and window lengths.
    method : str
        Any bounded :func:`scipy.optimize.minimize` method; ``"L-BFGS-B"``
        (analytic gradient) by default, ``"Nelder-Mead"`` or ``"Powell"``
        as derivative-free alternatives.
    maxiter : int
        Iteration cap passed to the optimiser.
    phi_bounds : (float, float)
        Clamp for the prior precision.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    if m.shape != n.shape:
        raise ValueError("m and n must have the same shape")
    if np.any(m < 0) or np.any(m > n):
        raise ValueError("need 0 <= m <= n for every item")
    keep = n > 0
    if not keep.any():
        raise ValueError("need at least one item with n > 0")
    m, n = m[keep], n[keep]

    start = moment_start(m, n)
    lo_phi, hi_phi = phi_bounds
    bounds = [tuple(logit(MU_BOUNDS)), (math.log(lo_phi), math.log(hi_phi))]
    x0 = np.array([logit(start.mu_pi), math.log(np.clip(start.phi, lo_phi, hi_phi))])
    f0 = _neg_loglik_and_grad(x0, m, n)[0]

    jac = method in ("L-BFGS-B", "TNC", "SLSQP", "trust-constr")
    if jac:
        res = optimize.minimize(
            _neg_loglik_and_grad, x0, args=(m, n), jac=True, method=method,
            bounds=bounds, options={"maxiter": maxiter, **_TIGHT.get(method, {})},
        )
    else:
        res = optimize.minimize(
            lambda t: _neg_loglik_and_grad(t, m, n)[0], x0, method=method,
            bounds=bounds, options={"maxiter": maxiter * 5, "xatol": 1e-10, "fatol": 1e-10}
            if method == "Nelder-Mead" else {"maxiter": maxiter},
        )
    x, fx = (res.x, float(res.fun)) if res.fun <= f0 else (x0, f0)
    x = np.clip(x, [b[0] for b in bounds], [b[1] for b in bounds])

    span = np.array([b[1] - b[0] for b in bounds])
    at_lo = np.isclose(x, [b[0] for b in bounds], atol=1e-6 * span, rtol=0)
    at_hi = np.isclose(x, [b[1] for b in bounds], atol=1e-6 * span, rtol=0)
    at_boundary = bool(np.any(at_lo | at_hi))
    hyper = OccurrenceHyper(float(expit(x[0])), float(math.exp(x[1])))
    ok = bool(res.success)
    if not ok:
        # L-BFGS-B can stop with a line-search failure once the objective is
        # flat to machine precision; accept that when the gradient vanishes
        g = _neg_loglik_and_grad(x, m, n)[1]
        ok = bool(np.max(np.abs(g)) <= 1e-6 * max(1.0, abs(fx)))
    return OccurrenceFit(
        hyper=hyper,
        log_marginal=-fx,
        converged=ok and not at_boundary,
        at_boundary=at_boundary,
        n_iter=int(getattr(res, "nit", 0) or 0),
        message=str(res.message),
    )


def posterior_occurrence(hyper: OccurrenceHyper, m, n):
    """Posterior mean of the occurrence probability and its pooling weight.

    Works elementwise on arrays; scalar inputs give an
    :class:`OccurrencePosterior`.
    """
    scalar = np.ndim(m) == 0 and np.ndim(n) == 0
    m_ = np.asarray(m, dtype=float)
    n_ = np.asarray(n, dtype=float)
    if np.any(m_ < 0) or np.any(m_ > n_):
        raise ValueError("need 0 <= m <= n")
    pi_hat = (hyper.alpha + m_) / (hyper.phi + n_)
    lam = n_ / (n_ + hyper.phi)
    if scalar:
        return OccurrencePosterior(float(pi_hat), float(lam))
    return pi_hat, lam
