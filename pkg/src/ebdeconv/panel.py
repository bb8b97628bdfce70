"""Heterogeneous Gaussian location-scale panels with AR(1) dynamics.

The model is y_it = alpha_i + v_it with v_it = rho v_i,t-1 + sqrt(theta_i) e_it
and e_it standard normal (the innovation scale is normalized to one).  After
quasi-differencing, y~_it = y_it - rho y_i,t-1 has mean (1 - rho) alpha_i, and the
unit mean and variance of the y~_it are sufficient for (alpha_i, theta_i).
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .kernels import (
    DiscreteDistribution,
    GammaScale,
    Grid,
    LikelihoodMatrix,
    StudentTLocation,
    build_grid,
    build_likelihood_matrix,
    log_grid,
)
from .npmle import NpmleSolution, SolverConfig, solve_npmle

__all__ = [
    "PanelDataset",
    "SufficientStats",
    "ProfileCurve",
    "sufficient_stats",
    "default_grids",
    "bivariate_log_likelihood",
    "bivariate_likelihood_matrix",
    "fit_independent_heterogeneity",
    "fit_bivariate_heterogeneity",
    "panel_loglik",
    "profile_loglik",
    "wilks_interval",
    "simulate_ar1_panel",
]

_LOG_2PI = np.log(2.0 * np.pi)
WILKS_95 = float(stats.chi2.ppf(0.95, 1))
MAX_COLUMNS = 10_000


@dataclass(frozen=True)
class PanelDataset:
    """Ragged panel: one time series per unit, periods 1..m_i."""

    ids: tuple
    series: tuple

    def __post_init__(self):
        if len(self.ids) != len(self.series):
            raise ValueError("ids and series differ in length")
        if len(self.ids) == 0:
            raise ValueError("panel has no units")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate unit ids")
        clean = []
        for uid, s in zip(self.ids, self.series):
            arr = np.asarray(s, dtype=float).ravel().copy()
            if arr.size < 2:
                raise ValueError(f"unit {uid!r} has fewer than 2 periods")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"unit {uid!r} has non-finite values")
            arr.setflags(write=False)
            clean.append(arr)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "series", tuple(clean))

    @classmethod
    def from_arrays(cls, values, ids=None) -> "PanelDataset":
        """Balanced panel from an (n, m) array."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        ids = tuple(range(1, values.shape[0] + 1)) if ids is None else tuple(ids)
        return cls(ids, tuple(values))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.size for s in self.series])

    def map(self, fn) -> "PanelDataset":
        return PanelDataset(self.ids, tuple(fn(s) for s in self.series))

    def truncate(self, periods: int) -> "PanelDataset":
        return PanelDataset(self.ids, tuple(s[:periods] for s in self.series))


@dataclass(frozen=True)
class SufficientStats:
    """Per-unit sufficient statistics for (alpha_i, theta_i) at a given rho.

    ``mean`` has mean (1 - rho) alpha and variance theta / ``eff_length``;
    ``var`` has (length - 1) var / theta ~ chi2_{length - 1}.  ``log_k`` is the
    log of the factor linking the joint density of the unit's series to the
    product of the normal and gamma densities of (mean, var).
    """

    mean: np.ndarray
    var: np.ndarray
    length: np.ndarray
    eff_length: np.ndarray
    rho: float
    initial: str
    log_k: np.ndarray = field(repr=False)

    @property
    def shape(self) -> np.ndarray:
        return (self.length - 1) / 2.0

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.mean / (1.0 - self.rho)

    def __len__(self) -> int:
        return self.mean.size


def _unit_stats(y: np.ndarray, rho: float, initial: str, keep_first: bool):
    if initial == "drop":
        if rho == 0 and keep_first:
            z = y
        else:
            if y.size < 3:
                raise ValueError("differencing needs at least 3 periods per unit")
            z = y[1:] - rho * y[:-1]
        k = z.size
        zbar = z.mean()
        rss = float(np.sum((z - zbar) ** 2))
        return zbar, rss, k, float(k), 0.0
    if initial == "stationary":
        c = np.sqrt(1.0 - rho * rho)
        z = np.concatenate([[c * y[0]], y[1:] - rho * y[:-1]])
        x = np.full(z.size, 1.0 - rho)
        x[0] = c
        xtx = float(x @ x)
        a_hat = float(x @ z) / xtx
        rss = float(np.sum((z - x * a_hat) ** 2))
        # Jacobian of y_1 -> sqrt(1 - rho^2) y_1
        return (1.0 - rho) * a_hat, rss, z.size, xtx / (1.0 - rho) ** 2, np.log(c)
    raise ValueError(f"unknown initial condition {initial!r}")


def sufficient_stats(
    panel: PanelDataset,
    rho: float,
    initial: Literal["drop", "stationary"] = "drop",
    keep_first_at_zero: bool = True,
) -> SufficientStats:
    """Quasi-difference each unit and reduce it to (mean, variance).

    With ``initial="drop"`` the first period only conditions the rest; at
    ``rho == 0`` the raw series is used unless ``keep_first_at_zero`` is
    False (profiles need the same conditioning set for every rho).  With
    ``initial="stationary"`` y_1 ~ N(alpha, theta / (1 - rho^2)) is included.
    Plain first differences (``rho == 1``) are allowed in drop mode.
    """
    if abs(rho) > 1 or (initial == "stationary" and abs(rho) == 1):
        raise ValueError("|rho| must be below 1 (or equal to 1 when differencing)")
    rows = [_unit_stats(y, rho, initial, keep_first_at_zero) for y in panel.series]
    mean, rss, k, eff, jac = (np.array(c, dtype=float) for c in zip(*rows))
    if np.any(k < 2):
        raise ValueError("each unit needs at least 2 observations after differencing")
    var = rss / (k - 1)
    r = (k - 1) / 2.0
    with np.errstate(divide="ignore"):
        log_k = (
            -0.5 * k * _LOG_2PI
            - 0.5 * (np.log(eff) - _LOG_2PI)
            - (r - 1.0) * np.log(var)
            - r * np.log(r)
            + gammaln(r)
            + jac
        )
    return SufficientStats(mean, var, k.astype(int), eff, float(rho), initial, log_k)


def default_grids(stats_: SufficientStats, size=(60, 60), padding: float = 0.0):
    """alpha grid over the alpha_hat range, log-spaced theta grid over the var range."""
    na, nt = size
    alpha = build_grid(stats_.alpha_hat, na, padding)
    pos = stats_.var[stats_.var > 0]
    if pos.size == 0:
        raise ValueError("all unit variances are zero")
    theta = log_grid(max(pos.min(), 1e-6), max(pos.max(), 1e-6), nt)
    return alpha, theta


def bivariate_log_likelihood(stats_: SufficientStats, alpha, theta) -> np.ndarray:
    """log f(mean_i | (1-rho) alpha_k, theta_k / eff_i) + log g(var_i | theta_k).

    ``alpha`` and ``theta`` are matched atom coordinates (same length).
    """
    alpha = np.asarray(alpha, dtype=float)[None, :]
    theta = np.asarray(theta, dtype=float)[None, :]
    if np.any(theta <= 0):
        raise ValueError("theta atoms must be positive")
    if np.any(stats_.var <= 0):
        raise ValueError("zero within-unit variance; gamma likelihood degenerate")
    ybar = stats_.mean[:, None]
    eff = stats_.eff_length[:, None]
    s = stats_.var[:, None]
    r = stats_.shape[:, None]
    mu = (1.0 - stats_.rho) * alpha
    log_normal = 0.5 * (np.log(eff) - _LOG_2PI - np.log(theta)) - 0.5 * eff * (ybar - mu) ** 2 / theta
    log_gamma = (r - 1.0) * np.log(s) - s * r / theta - gammaln(r) - r * np.log(theta / r)
    return log_normal + log_gamma


def _product_atoms(alpha_grid: Grid, theta_grid: Grid) -> np.ndarray:
    aa, tt = np.meshgrid(alpha_grid.points, theta_grid.points, indexing="ij")
    return np.column_stack([aa.ravel(), tt.ravel()])


def bivariate_likelihood_matrix(stats_: SufficientStats, alpha_grid: Grid, theta_grid: Grid) -> LikelihoodMatrix:
    atoms = _product_atoms(alpha_grid, theta_grid)
    if atoms.shape[0] > MAX_COLUMNS:
        warnings.warn(
            f"bivariate grid has {atoms.shape[0]} columns (> {MAX_COLUMNS})",
            RuntimeWarning,
            stacklevel=2,
        )
    logv = bivariate_log_likelihood(stats_, atoms[:, 0], atoms[:, 1])
    return LikelihoodMatrix.from_log(logv, atoms)


def fit_bivariate_heterogeneity(
    stats_: SufficientStats,
    alpha_grid: Optional[Grid] = None,
    theta_grid: Optional[Grid] = None,
    cfg: Optional[SolverConfig] = None,
    size=(60, 60),
) -> NpmleSolution:
    """NPMLE of the joint (alpha, theta) distribution on a product grid."""
    if alpha_grid is None or theta_grid is None:
        da, dt = default_grids(stats_, size)
        alpha_grid = da if alpha_grid is None else alpha_grid
        theta_grid = dt if theta_grid is None else theta_grid
    A = bivariate_likelihood_matrix(stats_, alpha_grid, theta_grid)
    return solve_npmle(A, cfg)


def fit_independent_heterogeneity(
    stats_: SufficientStats,
    theta_grid: Optional[Grid] = None,
    alpha_grid: Optional[Grid] = None,
    cfg: Optional[SolverConfig] = None,
    size=(300, 300),
):
    """Two-step fit under independent alpha and theta.

    Returns ``(theta_solution, alpha_solution)``: the scale NPMLE from the
    gamma likelihood of the unit variances, then the location NPMLE from the
    Student-t likelihood of alpha_hat, which no longer involves theta.
    """
    if np.any(stats_.var <= 0):
        raise ValueError("zero within-unit variance; gamma likelihood degenerate")
    if theta_grid is None or alpha_grid is None:
        da, dt = default_grids(stats_, size)
        alpha_grid = da if alpha_grid is None else alpha_grid
        theta_grid = dt if theta_grid is None else theta_grid
    a_theta = build_likelihood_matrix(GammaScale(stats_.shape), stats_.var, theta_grid)
    g_theta = solve_npmle(a_theta, cfg)
    scale = np.sqrt(stats_.var / stats_.eff_length) / (1.0 - stats_.rho)
    kernel = StudentTLocation(df=stats_.length - 1.0, scale=scale)
    a_alpha = build_likelihood_matrix(kernel, stats_.alpha_hat, alpha_grid)
    g_alpha = solve_npmle(a_alpha, cfg)
    return g_theta, g_alpha


def panel_loglik(stats_: SufficientStats, H: DiscreteDistribution) -> float:
    """sum_i [K_i + log sum_k H_k f(mean_i | alpha_k, theta_k) g(var_i | theta_k)]."""
    logv = bivariate_log_likelihood(stats_, H.atoms[:, 0], H.atoms[:, 1])
    with np.errstate(divide="ignore"):
        logv = logv + np.log(H.weights)[None, :]
    top = logv.max(axis=1)
    mix = top + np.log(np.exp(logv - top[:, None]).sum(axis=1))
    return float(np.sum(stats_.log_k + mix))


@dataclass(frozen=True)
class ProfileCurve:
    """Profile log-likelihood over a rho grid with its Wilks interval.

    ``crossings`` lists every interpolated crossing of the chi-square cutoff;
    ``flags`` may contain "degenerate", "multimodal", "open-left",
    "open-right" or "uncertified".
    """

    rho_grid: np.ndarray
    loglik: np.ndarray
    rho_hat: float
    wilks_ci: tuple
    crossings: tuple
    flags: tuple
    certified: np.ndarray
    solutions: tuple = field(default=(), repr=False)

    @property
    def mixing_at_hat(self) -> Optional[NpmleSolution]:
        if not self.solutions:
            return None
        return self.solutions[int(np.argmax(self.loglik))]


def wilks_interval(rho_grid, loglik, level: float = 0.95):
    """Interpolated {rho : 2 (l(rho_hat) - l(rho)) <= chi2_1(level)}.

    Returns ``(rho_hat, (lo, hi), crossings, flags)``.
    """
    r = np.asarray(rho_grid, dtype=float)
    ll = np.asarray(loglik, dtype=float)
    if r.size == 0:
        raise ValueError("empty rho grid")
    if not np.all(np.isfinite(ll)):
        raise ValueError("profile log-likelihood is not finite on the grid")
    k = int(np.argmax(ll))
    rho_hat = float(r[k])
    if r.size == 1:
        return rho_hat, (rho_hat, rho_hat), (), ("degenerate",)
    cut = ll[k] - 0.5 * float(stats.chi2.ppf(level, 1))
    h = ll - cut
    crossings = []
    for i in range(r.size - 1):
        if (h[i] >= 0) != (h[i + 1] >= 0):
            w = h[i] / (h[i] - h[i + 1])
            crossings.append(float(r[i] + w * (r[i + 1] - r[i])))
    flags = []
    left = [c for c in crossings if c < rho_hat]
    right = [c for c in crossings if c > rho_hat]
    lo = max(left) if left else float(r[0])
    hi = min(right) if right else float(r[-1])
    if not left:
        flags.append("open-left")
    if not right:
        flags.append("open-right")
    if len(crossings) > 2:
        flags.append("multimodal")
    return rho_hat, (lo, hi), tuple(crossings), tuple(flags)


def _profile_point(args):
    panel, rho, initial, size, cfg = args
    st = sufficient_stats(panel, rho, initial, keep_first_at_zero=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = fit_bivariate_heterogeneity(st, cfg=cfg, size=size)
    return float(np.sum(st.log_k) + sol.loglik), sol


def _worker_count(n_jobs: Optional[int]) -> int:
    cap = os.environ.get("EBDECONV_THREADS")
    n = 1 if n_jobs is None else int(n_jobs)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _evaluate_profile(panel, grid, initial, size, cfg, n_jobs) -> dict:
    jobs = [(panel, float(r), initial, tuple(size), cfg) for r in grid]
    workers = _worker_count(n_jobs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_profile_point, jobs))
    else:
        results = [_profile_point(j) for j in jobs]
    return {float(r): res for r, res in zip(grid, results)}


def profile_loglik(
    panel: PanelDataset,
    rho_grid: Sequence[float],
    size=(60, 60),
    cfg: Optional[SolverConfig] = None,
    initial: Literal["drop", "stationary"] = "drop",
    n_jobs: Optional[int] = 1,
    keep_solutions: bool = False,
    refine: Optional[float] = None,
) -> ProfileCurve:
    """Profile log-likelihood l(rho) with the bivariate NPMLE H_rho at each rho.

    The K terms are included so that values are comparable across rho, and
    the first period is conditioned on at every rho (including 0).

    With ``refine`` set to a step size, a second pass evaluates a finer grid
    spanning the coarse points inside the Wilks cutoff plus one coarse
    neighbour on each side; both passes are merged into the returned curve.
    """
    grid = np.unique(np.asarray(rho_grid, dtype=float))
    if grid.size == 0 or np.any(np.abs(grid) >= 1):
        raise ValueError("rho grid must be a nonempty subset of (-1, 1)")
    evaluated = _evaluate_profile(panel, grid, initial, size, cfg, n_jobs)
    if refine is not None and grid.size > 1:
        ll = np.array([evaluated[r][0] for r in grid])
        inside = np.flatnonzero(ll >= ll.max() - 0.5 * WILKS_95)
        lo = grid[max(inside.min() - 1, 0)]
        hi = grid[min(inside.max() + 1, grid.size - 1)]
        fine = np.round(np.arange(lo, hi + 0.5 * refine, refine), 12)
        fine = fine[(fine >= lo) & (fine <= hi) & (np.abs(fine) < 1)]
        todo = np.array([r for r in fine if not np.any(np.isclose(r, grid, rtol=0, atol=1e-12))])
        if todo.size:
            evaluated.update(_evaluate_profile(panel, todo, initial, size, cfg, n_jobs))
        grid = np.array(sorted(evaluated))
    ll = np.array([evaluated[r][0] for r in grid])
    sols = tuple(evaluated[r][1] for r in grid)
    cert = np.array([s.certified for s in sols])
    rho_hat, ci, crossings, flags = wilks_interval(grid, ll)
    if not np.all(cert):
        flags = flags + ("uncertified",)
    return ProfileCurve(grid, ll, rho_hat, ci, crossings, flags, cert,
                        sols if keep_solutions else ())


def simulate_ar1_panel(
    H: DiscreteDistribution,
    rho: float,
    n: int,
    m: int,
    rng: np.random.Generator,
    stationary_start: bool = True,
) -> PanelDataset:
    """Draw n units of length m from y_it = alpha_i + v_it, v AR(1) with scale theta_i."""
    draws = H.sample(rng, n)
    alpha, theta = draws[:, 0], draws[:, 1]
    sd = np.sqrt(theta)
    v = np.empty((n, m))
    v0_sd = sd / np.sqrt(1.0 - rho * rho) if stationary_start else sd
    v[:, 0] = v0_sd * rng.standard_normal(n)
    for t in range(1, m):
        v[:, t] = rho * v[:, t - 1] + sd * rng.standard_normal(n)
    return PanelDataset.from_arrays(alpha[:, None] + v)
