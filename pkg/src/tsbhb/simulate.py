"""Synthetic panels drawn from the hierarchical generative model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .occurrence import OccurrenceHyper
from .panel import DemandSeries, Panel
from .size import GammaSizeHyper, SizeHyper

__all__ = ["SyntheticSpec", "SyntheticPanel", "generate_panel"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Panel size, horizon and true hyperparameters.

    Exactly one of ``size`` (log-normal sizes) or ``gamma_size`` is used;
    ``gamma_size`` wins when both are given.
    """

    n_items: int = 500
    n_periods: int = 120
    occurrence: OccurrenceHyper = OccurrenceHyper(0.1, 5.0)
    size: SizeHyper = SizeHyper(1.0, 0.5, 1.0)
    gamma_size: Optional[GammaSizeHyper] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 1 or self.n_periods < 1:
            raise ValueError("n_items and n_periods must be positive")


@dataclass(frozen=True)
class SyntheticPanel:
    """A generated panel with the latent per-item parameters.

    ``mu`` holds the true log-size means (log-normal) or the true rates
    (gamma sizes).
    """

    panel: Panel
    pi: np.ndarray
    mu: np.ndarray
    spec: SyntheticSpec

    def true_mean(self) -> np.ndarray:
        """Per-period expected demand of each item."""
        spec = self.spec
        if spec.gamma_size is not None:
            return self.pi * spec.gamma_size.alpha_s / self.mu
        return self.pi * np.exp(self.mu + 0.5 * spec.size.sigma2)


def generate_panel(spec: SyntheticSpec) -> SyntheticPanel:
    """Draw item parameters, then Bernoulli occurrences and positive sizes."""
    rng = np.random.default_rng(spec.seed)
    N, T = spec.n_items, spec.n_periods
    occ = spec.occurrence
    pi = rng.beta(occ.alpha, occ.beta, size=N)
    hits = rng.random((N, T)) < pi[:, None]
    if spec.gamma_size is not None:
        g = spec.gamma_size
        latent = rng.gamma(g.a, 1.0 / g.b, size=N)
        sizes = rng.gamma(g.alpha_s, 1.0 / latent[:, None], size=(N, T))
    else:
        sz = spec.size
        latent = sz.mu0 + np.sqrt(sz.tau2) * rng.standard_normal(N)
        sizes = np.exp(latent[:, None] + np.sqrt(sz.sigma2) * rng.standard_normal((N, T)))
    Y = np.where(hits, sizes, 0.0)
    width = len(str(N - 1))
    series = tuple(DemandSeries(f"item{k:0{width}d}", Y[k]) for k in range(N))
    return SyntheticPanel(Panel(series, "custom"), pi, latent, spec)
