"""ARMA(1,1) income dynamics with heterogeneous location, via the Kalman filter.

    y_it = mu_i + u_it + v_it
    u_it = rho u_i,t-1 + sigma_nu nu_it
    v_it = sigma_eta (eta_it + theta eta_i,t-1)

In state-space form the state has dimension 3, y_it = mu_i + (1, 0, 0) a_it with
no measurement noise, and the filter starts from the stationary state
distribution.
"""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import linalg

from .kernels import DiscreteDistribution, Grid, LikelihoodMatrix, build_grid
from .npmle import NpmleSolution, SolverConfig, solve_npmle
from .panel import PanelDataset

__all__ = [
    "ArmaParams",
    "StateSpaceSystem",
    "ArmaProfile",
    "arma_loglik_trajectory",
    "kalman_filter",
    "build_arma_likelihood_matrix",
    "arma_lattice",
    "fit_arma_profile",
    "simulate_arma_panel",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, order=True)
class ArmaParams:
    rho: float
    theta_ma: float
    sigma_nu: float
    sigma_eta: float

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")
        if self.sigma_nu < 0 or self.sigma_eta < 0:
            raise ValueError("scales must be nonnegative")
        if self.sigma_nu == 0 and self.sigma_eta == 0:
            raise ValueError("sigma_nu and sigma_eta cannot both be zero")

    def as_tuple(self):
        return (self.rho, self.theta_ma, self.sigma_nu, self.sigma_eta)


@dataclass(frozen=True)
class StateSpaceSystem:
    """Transition ``T``, noise loading ``H`` (composed with the scale matrix),
    state covariance ``Q = H H'`` and stationary covariance ``P0``.
    """

    T: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    P0: np.ndarray
    Z: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    @classmethod
    def from_params(cls, p: ArmaParams) -> "StateSpaceSystem":
        rho, th = p.rho, p.theta_ma
        T = np.array([[rho, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
        load = np.array([[1.0, 1.0, 0.0], [th - rho, 0.0, 0.0], [-th * rho, 0.0, 0.0]])
        H = load @ np.diag([p.sigma_eta, p.sigma_nu, 0.0])
        Q = H @ H.T
        P0 = linalg.solve_discrete_lyapunov(T, Q)
        P0 = 0.5 * (P0 + P0.T)
        return cls(T, H, Q, P0)


def _filter_gains(system: StateSpaceSystem, n_periods: int):
    """Innovation variances F_t and gains K_t; these do not depend on the data."""
    T, Q = system.T, system.Q
    P = system.P0.copy()
    F = np.empty(n_periods)
    K = np.empty((n_periods, 3))
    for t in range(n_periods):
        f = P[0, 0]
        if not f > 1e-300:
            raise FloatingPointError(f"innovation variance not positive at t={t + 1}")
        F[t] = f
        K[t] = P[:, 0] / f
        P_filt = P - np.outer(P[:, 0], P[0, :]) / f
        P = T @ P_filt @ T.T + Q
        P = 0.5 * (P + P.T)
    return F, K


def _innovations(system: StateSpaceSystem, K: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """One-step prediction errors for each row of Y (zero-mean model)."""
    n, T_len = Y.shape
    a = np.zeros((n, 3))
    v = np.empty_like(Y)
    Tt = system.T.T
    for t in range(T_len):
        v[:, t] = Y[:, t] - a[:, 0]
        a = (a + v[:, t, None] * K[t][None, :]) @ Tt
    return v


def kalman_filter(params: ArmaParams, y, mu: float = 0.0):
    """Run the filter on one trajectory.

    Returns ``(loglik, innovations, F, a_last, P_last)`` where ``a_last`` and
    ``P_last`` are the filtered state mean and covariance after the last
    observation.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise ValueError("empty trajectory")
    sysm = StateSpaceSystem.from_params(params)
    a = np.zeros(3)
    P = sysm.P0.copy()
    ll = 0.0
    v = np.empty(y.size)
    F = np.empty(y.size)
    for t in range(y.size):
        f = P[0, 0]
        if not f > 1e-300:
            raise FloatingPointError(f"innovation variance not positive at t={t + 1}")
        v[t] = y[t] - mu - a[0]
        F[t] = f
        k = P[:, 0] / f
        a = a + k * v[t]
        P = P - np.outer(P[:, 0], P[0, :]) / f
        ll -= 0.5 * (_LOG_2PI + np.log(f) + v[t] ** 2 / f)
        if t < y.size - 1:
            a = sysm.T @ a
            P = sysm.T @ P @ sysm.T.T + sysm.Q
            P = 0.5 * (P + P.T)
    return ll, v, F, a, P


def arma_loglik_trajectory(params: ArmaParams, mu: float, traj) -> float:
    """Exact Gaussian log-likelihood of one trajectory by prediction-error decomposition."""
    return float(kalman_filter(params, traj, mu)[0])


def _loglik_table(params: ArmaParams, panel: PanelDataset, mu: np.ndarray) -> np.ndarray:
    """n x m table of trajectory log-likelihoods at each mu.

    The filter is linear in the data, so innovations of y - mu equal
    e(y) - mu e(1); one pass over y and one over a vector of ones suffice.
    """
    sysm = StateSpaceSystem.from_params(params)
    lengths = panel.lengths
    F, K = _filter_gains(sysm, int(lengths.max()))
    out = np.empty((len(panel), mu.size))
    for L in np.unique(lengths):
        rows = np.flatnonzero(lengths == L)
        Y = np.vstack([panel.series[i] for i in rows])
        ey = _innovations(sysm, K, Y)
        e1 = _innovations(sysm, K, np.ones((1, L)))[0]
        w = 1.0 / F[:L]
        q0 = (ey * ey) @ w
        q1 = (ey * e1) @ w
        q2 = float((e1 * e1) @ w)
        const = -0.5 * (L * _LOG_2PI + np.sum(np.log(F[:L])))
        quad = q0[:, None] - 2.0 * q1[:, None] * mu[None, :] + q2 * mu[None, :] ** 2
        out[rows] = const - 0.5 * quad
    return out


def build_arma_likelihood_matrix(params: ArmaParams, panel: PanelDataset, mu_grid: Grid) -> LikelihoodMatrix:
    """A[i, j] = exp(loglik(params, mu_j, y_i) - max_j), row maxima kept as shifts."""
    logv = _loglik_table(params, panel, mu_grid.points)
    return LikelihoodMatrix.from_log(logv, mu_grid)


def arma_lattice(rhos, thetas, sigma_nus, sigma_etas) -> list:
    """Cartesian lattice of valid ArmaParams; invalid corners are skipped."""
    out = []
    for r, t, sn, se in itertools.product(rhos, thetas, sigma_nus, sigma_etas):
        try:
            out.append(ArmaParams(float(r), float(t), float(sn), float(se)))
        except ValueError:
            continue
    return out


@dataclass(frozen=True)
class ArmaProfile:
    """Profile over a structural lattice.

    ``table`` rows are ``(rho, theta, sigma_nu, sigma_eta, loglik, certified)``
    in lattice order; failed solves carry ``nan`` and ``False``.
    """

    best: ArmaParams
    mixing: NpmleSolution
    table: tuple
    top: tuple

    @property
    def loglik(self) -> float:
        return self.mixing.loglik


def _lattice_point(args):
    params, panel, mu_grid, cfg = args
    try:
        A = build_arma_likelihood_matrix(params, panel, mu_grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve_npmle(A, cfg)
        return sol.loglik, sol.certified, None
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        return np.nan, False, str(exc)


def fit_arma_profile(
    panel: PanelDataset,
    lattice: Iterable[ArmaParams],
    mu_grid: Optional[Grid] = None,
    cfg: Optional[SolverConfig] = None,
    n_jobs: Optional[int] = 1,
    n_top: int = 5,
) -> ArmaProfile:
    """Maximize the NPMLE log-likelihood over a lattice of structural parameters.

    Each lattice point solves the (convex) mixing problem for mu on
    ``mu_grid``.  Ties in log-likelihood go to the lexicographically smallest
    parameter tuple.  The profile surface can be flat along ridges in
    (sigma_nu, sigma_eta); ``top`` lists the best ``n_top`` points.
    """
    points = list(lattice)
    if not points:
        raise ValueError("empty lattice")
    if mu_grid is None:
        mu_grid = build_grid([s.mean() for s in panel.series], 300, 0.05)
    jobs = [(p, panel, mu_grid, cfg) for p in points]
    cap = os.environ.get("EBDECONV_THREADS")
    workers = max(1, min(int(n_jobs or 1), int(cap) if cap else int(n_jobs or 1)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_lattice_point, jobs, chunksize=8))
    else:
        results = [_lattice_point(j) for j in jobs]
    table = tuple((*p.as_tuple(), ll, cert) for p, (ll, cert, _) in zip(points, results))
    ok = [i for i, (ll, _, _) in enumerate(results) if np.isfinite(ll)]
    if not ok:
        raise RuntimeError("every lattice point failed")
    ranked = sorted(ok, key=lambda i: (-results[i][0], points[i].as_tuple()))
    best = points[ranked[0]]
    sol = solve_npmle(build_arma_likelihood_matrix(best, panel, mu_grid), cfg)
    top = tuple((points[i], results[i][0]) for i in ranked[:n_top])
    return ArmaProfile(best, sol, table, top)


def simulate_arma_panel(
    params: ArmaParams,
    G_mu: DiscreteDistribution,
    n: int,
    T: int,
    rng: np.random.Generator,
    burn_in: int = 200,
) -> PanelDataset:
    """Draw n trajectories of length T with mu_i ~ G_mu, started far in the past."""
    mu = G_mu.sample(rng, n)
    total = T + burn_in
    nu = rng.standard_normal((n, total))
    eta = rng.standard_normal((n, total + 1))
    u = np.zeros(n)
    y = np.empty((n, T))
    for t in range(total):
        u = params.rho * u + params.sigma_nu * nu[:, t]
        v = params.sigma_eta * (eta[:, t + 1] + params.theta_ma * eta[:, t])
        if t >= burn_in:
            y[:, t - burn_in] = mu + u + v
    return PanelDataset.from_arrays(y)
