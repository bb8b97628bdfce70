"""Predictive simulation from a fitted heterogeneity distribution.

A unit's observed prefix updates the fitted mixing distribution to a
posterior over its parameters; future paths are simulated by drawing
parameters from that posterior and running the dynamics forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .kernels import DiscreteDistribution
from .panel import PanelDataset, bivariate_log_likelihood, sufficient_stats
from .statespace import ArmaParams, StateSpaceSystem, kalman_filter

__all__ = [
    "UnitPosterior",
    "PredictionEnsemble",
    "FanBands",
    "unit_posterior",
    "simulate_paths",
    "quantile_bands",
    "uniform_band",
    "increment_density_table",
    "density_transforms",
    "arma_unit_posterior",
    "simulate_arma_paths",
    "DEFAULT_PROBS",
]

DEFAULT_PROBS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class UnitPosterior:
    """Posterior masses over the atoms of a fitted mixing distribution.

    ``atoms`` are (alpha, theta) rows for the AR(1) model or scalar mu values
    for the ARMA model.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-10 or np.any(w < 0):
            raise ValueError("posterior weights must be a probability vector")

    def as_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.atoms, self.weights)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    if not np.any(np.isfinite(logw)):
        raise FloatingPointError("all posterior weights underflow")
    return np.exp(logw - logsumexp(logw))


def unit_posterior(
    H: DiscreteDistribution,
    prefix,
    rho: float,
    method: Literal["direct", "sufficient"] = "direct",
) -> UnitPosterior:
    """Posterior over the (alpha, theta) atoms of ``H`` given y_1..y_T0.

    The likelihood conditions on y_1: it is the product over t >= 2 of normal
    densities of y_t - rho y_{t-1} with mean (1 - rho) alpha and variance theta.
    ``method="sufficient"`` evaluates the same quantity through the unit's
    (mean, variance) statistics; it needs T0 >= 3 and a nonzero variance.
    """
    y = np.asarray(prefix, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("prefix needs at least 2 periods")
    if H.atoms.ndim != 2 or H.atoms.shape[1] != 2:
        raise ValueError("H must have (alpha, theta) atoms")
    alpha, theta = H.atoms[:, 0], H.atoms[:, 1]
    if method == "direct":
        z = y[1:] - rho * y[:-1]
        resid = z[:, None] - (1.0 - rho) * alpha[None, :]
        ll = -0.5 * np.sum(_LOG_2PI + np.log(theta)[None, :] + resid**2 / theta[None, :], axis=0)
    elif method == "sufficient":
        st = sufficient_stats(PanelDataset((0,), (y,)), rho, "drop", keep_first_at_zero=False)
        ll = (bivariate_log_likelihood(st, alpha, theta) + st.log_k[:, None])[0]
    else:
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(divide="ignore"):
        logw = np.log(H.weights) + ll
    return UnitPosterior(H.atoms, _normalize_log(logw))


def _stream(seed: int, unit: int, draw: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(unit, draw))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PredictionEnsemble:
    """``paths`` has shape (M * m, horizon), draw-major: rows k*m..(k+1)*m-1
    share the k-th parameter draw.  ``start`` is the last observed value."""

    paths: np.ndarray
    start: float
    seed: int
    m: int
    M: int
    params: dict

    @property
    def horizon(self) -> int:
        return self.paths.shape[1]

    def levels_with_start(self) -> np.ndarray:
        return np.column_stack([np.full(self.paths.shape[0], self.start), self.paths])


def simulate_paths(
    post: UnitPosterior,
    rho: float,
    last_value: float,
    horizon: int,
    m: int = 50,
    M: int = 50,
    seed: int = 0,
    drift: Literal["stationary-alpha", "raw-alpha"] = "stationary-alpha",
    unit: int = 0,
) -> PredictionEnsemble:
    """Draw (alpha, theta) M times from ``post``; run m paths per draw.

    With ``drift="stationary-alpha"`` the recursion is
    y_s = (1 - rho) alpha + rho y_{s-1} + sqrt(theta) u_s, so alpha is the
    stationary mean; ``"raw-alpha"`` uses alpha itself as the intercept.
    Each (unit, draw) pair has its own counter-based stream derived from
    ``seed``, so results do not depend on evaluation order.
    """
    if horizon < 1 or m < 1 or M < 1:
        raise ValueError("horizon, m and M must be positive")
    if drift not in ("stationary-alpha", "raw-alpha"):
        raise ValueError(f"unknown drift {drift!r}")
    atoms = np.asarray(post.atoms, dtype=float)
    cdf = np.cumsum(post.weights)
    cdf[-1] = 1.0
    out = np.empty((M * m, horizon))
    for k in range(M):
        rng = _stream(seed, unit, k)
        j = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        alpha, theta = atoms[j]
        c = (1.0 - rho) * alpha if drift == "stationary-alpha" else alpha
        sd = np.sqrt(theta)
        u = rng.standard_normal((m, horizon))
        prev = np.full(m, float(last_value))
        block = out[k * m:(k + 1) * m]
        for s in range(horizon):
            prev = c + rho * prev + sd * u[:, s]
            block[:, s] = prev
    params = {"rho": float(rho), "drift": drift, "unit": int(unit)}
    return PredictionEnsemble(out, float(last_value), int(seed), int(m), int(M), params)


@dataclass(frozen=True)
class FanBands:
    """Pointwise quantiles; ``quantiles[s, k]`` is the ``probs[k]`` quantile at period s+1."""

    probs: np.ndarray
    quantiles: np.ndarray

    def rows(self, actual: Optional[Sequence[float]] = None) -> list:
        out = []
        for s, q in enumerate(self.quantiles):
            row = [s + 1, *map(float, q)]
            if actual is not None:
                row.append(float(actual[s]))
            out.append(row)
        return out

    def header(self, actual: bool = False) -> list:
        cols = ["period"] + [f"p{int(round(100 * p)):02d}" for p in self.probs]
        return cols + ["actual"] if actual else cols


def quantile_bands(ensemble: PredictionEnsemble, probs: Sequence[float] = DEFAULT_PROBS) -> FanBands:
    """Per-period empirical quantiles, linear interpolation between order statistics."""
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0 or np.any((probs <= 0) | (probs >= 1)) or np.any(np.diff(probs) < 0):
        raise ValueError("probs must be sorted within (0, 1)")
    paths = ensemble.paths
    if paths.size == 0:
        raise ValueError("empty ensemble")
    q = np.quantile(paths, probs, axis=0, method="linear").T
    # guard against rounding in the interpolation
    q = np.maximum.accumulate(q, axis=1)
    return FanBands(probs, q)


def uniform_band(ensemble: PredictionEnsemble, level: float = 0.9):
    """Rank envelope containing at least ``level`` of whole paths.

    Paths are ranked at each period; a path's depth is its smallest distance
    in rank from either extreme over all periods.  The band at depth k runs
    from the k-th smallest to the k-th largest value at every period and
    contains exactly the paths of depth >= k; the deepest k keeping a
    ``level`` fraction is returned as ``(lower, upper)``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    paths = ensemble.paths
    N = paths.shape[0]
    if N < 2:
        raise ValueError("need at least 2 paths for a rank envelope")
    order = np.argsort(paths, axis=0, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, N + 1)[:, None], axis=0)
    depth = np.min(np.minimum(ranks, N + 1 - ranks), axis=1)
    need = int(np.ceil(level * N))
    counts = np.bincount(depth, minlength=N + 2)
    covered = np.cumsum(counts[::-1])[::-1]  # covered[k] = #paths with depth >= k
    ks = np.flatnonzero(covered[1:] >= need) + 1
    k = int(ks.max())
    srt = np.sort(paths, axis=0)
    return srt[k - 1], srt[N - k]


def increment_density_table(data, n_points: int = 512, floor: float = 1e-12) -> np.ndarray:
    """Gaussian kernel density of increments with log and -1/sqrt transforms.

    ``data`` is either a PredictionEnsemble (paths are differenced, starting
    from the last observed value) or a 1-d array of increments.  Columns of
    the result are x, f, log f, -1/sqrt(f); transforms are NaN where
    f <= ``floor``.  The bandwidth follows Silverman's rule.
    """
    if isinstance(data, PredictionEnsemble):
        x = np.diff(data.levels_with_start(), axis=1).ravel()
    else:
        x = np.asarray(data, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("need at least 100 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values")
    if np.ptp(x) == 0:
        raise ValueError("degenerate input: zero variance")
    kde = stats.gaussian_kde(x, bw_method="silverman")
    h = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    f = kde(grid)
    logf, hel = density_transforms(f, floor)
    return np.column_stack([grid, f, logf, hel])


def density_transforms(f, floor: float = 1e-12):
    """``(log f, -1/sqrt f)``, NaN wherever f <= ``floor``."""
    f = np.asarray(f, dtype=float)
    ok = f > floor
    logf = np.full_like(f, np.nan)
    hel = np.full_like(f, np.nan)
    logf[ok] = np.log(f[ok])
    hel[ok] = -1.0 / np.sqrt(f[ok])
    return logf, hel


# ARMA(1,1) counterparts for model comparison


def arma_unit_posterior(params: ArmaParams, G_mu: DiscreteDistribution, prefix) -> UnitPosterior:
    """Posterior over the mu atoms given the prefix, via the Kalman filter."""
    y = np.asarray(prefix, dtype=float).ravel()
    mu = np.asarray(G_mu.atoms, dtype=float).ravel()
    ll = np.array([kalman_filter(params, y, m)[0] for m in mu])
    with np.errstate(divide="ignore"):
        logw = np.log(G_mu.weights) + ll
    return UnitPosterior(mu, _normalize_log(logw))


def _psd_sqrt(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_arma_paths(
    params: ArmaParams,
    post: UnitPosterior,
    prefix,
    horizon: int,
    m: int = 50,
    M: int = 50,
    seed: int = 0,
    unit: int = 0,
) -> PredictionEnsemble:
    """Draw mu from ``post``; draw the current state from its filtered
    distribution given the prefix; propagate the state equation forward."""
    if horizon < 1 or m < 1 or M < 1:
        raise ValueError("horizon, m and M must be positive")
    y = np.asarray(prefix, dtype=float).ravel()
    mu = np.asarray(post.atoms, dtype=float).ravel()
    sysm = StateSpaceSystem.from_params(params)
    filt = {}
    cdf = np.cumsum(post.weights)
    cdf[-1] = 1.0
    out = np.empty((M * m, horizon))
    for k in range(M):
        rng = _stream(seed, unit, k)
        j = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        if j not in filt:
            _, _, _, a, P = kalman_filter(params, y, mu[j])
            filt[j] = (a, _psd_sqrt(P))
        a, L = filt[j]
        state = a[None, :] + rng.standard_normal((m, 3)) @ L.T
        for s in range(horizon):
            state = state @ sysm.T.T + rng.standard_normal((m, 3)) @ sysm.H.T
            out[k * m:(k + 1) * m, s] = mu[j] + state[:, 0]
    p = {"model": "arma", **dict(zip(("rho", "theta_ma", "sigma_nu", "sigma_eta"), params.as_tuple())),
         "unit": int(unit)}
    return PredictionEnsemble(out, float(y[-1]), int(seed), int(m), int(M), p)
