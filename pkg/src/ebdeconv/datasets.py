"""Synthetic data for demonstrations and tests."""

from __future__ import annotations

import numpy as np

from .kernels import DiscreteDistribution
from .panel import PanelDataset, simulate_ar1_panel
from .statespace import ArmaParams, simulate_arma_panel

__all__ = [
    "lognormal_demo",
    "tack_counts",
    "ar1_demo_panel",
    "arma_demo_panel",
    "AR1_DEMO_H",
    "ARMA_DEMO_PARAMS",
    "ARMA_DEMO_G",
]

AR1_DEMO_H = DiscreteDistribution(np.array([[-0.5, 0.25], [0.5, 1.0]]), np.array([0.5, 0.5]))
ARMA_DEMO_PARAMS = ArmaParams(0.5, 0.15, 0.2, 0.5)
ARMA_DEMO_G = DiscreteDistribution(np.array([-0.5, 0.5]), np.array([0.5, 0.5]))


def lognormal_demo(rng: np.random.Generator, n: int = 1000):
    """theta_i = 3 + standard lognormal, y_i = theta_i + N(0, 1).

    Returns ``(y, theta)``.
    """
    theta = 3.0 + rng.lognormal(0.0, 1.0, n)
    return theta + rng.standard_normal(n), theta


def tack_counts(rng: np.random.Generator, n: int = 320, trials: int = 9):
    """Binomial counts out of ``trials`` with success probabilities drawn from
    a two-component beta mixture (a stand-in for thumbtack-rolling data).

    Returns ``(counts, p)``.
    """
    comp = rng.random(n) < 0.6
    p = np.where(comp, rng.beta(12, 6, n), rng.beta(4, 6, n))
    return rng.binomial(trials, p), p


def ar1_demo_panel(rng: np.random.Generator, n: int = 400, m: int = 15, rho: float = 0.5,
                   H: DiscreteDistribution = AR1_DEMO_H) -> PanelDataset:
    return simulate_ar1_panel(H, rho, n, m, rng)


def arma_demo_panel(rng: np.random.Generator, n: int = 400, T: int = 15,
                    params: ArmaParams = ARMA_DEMO_PARAMS,
                    G: DiscreteDistribution = ARMA_DEMO_G) -> PanelDataset:
    return simulate_arma_panel(params, G, n, T, rng)
