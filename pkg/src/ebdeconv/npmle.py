"""Kiefer-Wolfowitz NPMLE of a mixing distribution on a fixed grid.

The certified path is a primal-dual interior point method for the pair

    primal:  min_g  -sum_i log (A g)_i + n * sum_j g_j,   g >= 0
    dual:    max_nu  sum_i log nu_i   subject to  A' nu <= n

whose solutions satisfy nu_i = 1 / (A g)_i and sum_j g_j = 1.  Convergence is
declared on the first-order certificate

    d_j = sum_i A_ij / f_i - n <= tol   for all j,   |d_j| <= tol on the support,

which also bounds the log-likelihood gap to the optimum by ``max_j d_j``.
EM is kept as a slow, independent baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from .kernels import DiscreteDistribution, LikelihoodMatrix

__all__ = [
    "SolverConfig",
    "NpmleSolution",
    "solve_npmle",
    "em_step",
    "kkt_residual",
    "prune_atoms",
    "merge_adjacent",
    "mixture_loglik",
]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 200
    prune_eps: float = 1e-3
    algorithm: Literal["interior-point", "em"] = "interior-point"
    merge: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 <= self.prune_eps < 1:
            raise ValueError("prune_eps must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.algorithm not in ("interior-point", "em"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class NpmleSolution:
    """Result of :func:`solve_npmle`.

    Attributes
    ----------
    mixing : DiscreteDistribution
        Estimate after pruning atoms lighter than ``prune_eps``.
    weights : ndarray
        Unpruned masses on every grid column.
    dual : ndarray
        nu_i = 1 / f_i for the program posed on ``A.values``.
    loglik : float
        Unpruned mixture log-likelihood, row shifts included.
    kkt_gap : float
        max_j (sum_i A_ij / f_i) - n for the unpruned weights.
    iterations : int
    certified : bool
        Whether the KKT certificate holds at ``tol``.
    """

    mixing: DiscreteDistribution
    weights: np.ndarray
    dual: np.ndarray
    loglik: float
    kkt_gap: float
    iterations: int
    certified: bool

    def report(self) -> dict:
        return {
            "loglik": float(self.loglik),
            "kkt_gap": float(self.kkt_gap),
            "iterations": int(self.iterations),
            "certified": bool(self.certified),
            "n_atoms": len(self.mixing),
        }


def _values(A) -> np.ndarray:
    return A.values if isinstance(A, LikelihoodMatrix) else np.asarray(A, dtype=float)


def _weights(g) -> np.ndarray:
    return g.weights if isinstance(g, DiscreteDistribution) else np.asarray(g, dtype=float)


def _marginal(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    f = a @ g
    if np.any(f <= 0):
        raise ValueError(f"zero marginal density at observation {int(np.argmin(f))}")
    return f


def mixture_loglik(A, g) -> float:
    """sum_i log (A g)_i, plus row shifts when ``A`` is a LikelihoodMatrix."""
    a, w = _values(A), _weights(g)
    ll = float(np.sum(np.log(_marginal(a, w))))
    if isinstance(A, LikelihoodMatrix):
        ll += float(np.sum(A.log_shift))
    return ll


def kkt_residual(A, g):
    """Return ``(max_j d_j, d)`` with d_j = sum_i A_ij / f_i - n."""
    a, w = _values(A), _weights(g)
    f = _marginal(a, w)
    d = a.T @ (1.0 / f) - a.shape[0]
    return float(np.max(d)), d


def em_step(A, g) -> np.ndarray:
    """One EM update g_j <- g_j * mean_i(A_ij / f_i)."""
    a, w = _values(A), _weights(g)
    f = _marginal(a, w)
    new = w * (a.T @ (1.0 / f)) / a.shape[0]
    return new / new.sum()


def prune_atoms(g: DiscreteDistribution, eps: float) -> DiscreteDistribution:
    """Drop atoms with mass below ``eps`` and renormalize."""
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    keep = g.weights >= eps
    if not np.any(keep):
        raise ValueError("every atom falls below the pruning threshold")
    if np.all(keep):
        return g
    w = g.weights[keep]
    return DiscreteDistribution(g.atoms[keep], w / w.sum())


def merge_adjacent(g: DiscreteDistribution, step: float) -> DiscreteDistribution:
    """Combine scalar atoms closer than ``step`` at their weighted mean."""
    if g.atoms.ndim != 1:
        raise ValueError("merging is defined for scalar atoms only")
    order = np.argsort(g.atoms)
    atoms, w = g.atoms[order], g.weights[order]
    out_a, out_w = [atoms[0] * w[0]], [w[0]]
    last = atoms[0]
    for t, p in zip(atoms[1:], w[1:]):
        if t - last < step * (1 + 1e-9):
            out_a[-1] += t * p
            out_w[-1] += p
        else:
            out_a.append(t * p)
            out_w.append(p)
        last = t
    out_w = np.asarray(out_w)
    return DiscreteDistribution(np.asarray(out_a) / out_w, out_w / out_w.sum())


# interior iterates leave ~1e-15 mass everywhere; this is not support
_SUPPORT_FLOOR = 1e-8


def _certificate(a: np.ndarray, g: np.ndarray, tol: float, support_eps: float):
    gap, d = kkt_residual(a, g)
    on_support = g > max(support_eps, _SUPPORT_FLOOR)
    support_ok = not np.any(on_support) or float(np.max(np.abs(d[on_support]))) <= tol
    return gap, gap <= tol and support_ok


def _step_to_boundary(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


class _NewtonSystem:
    """Reduced Newton system, factored in whichever space is smaller."""

    def __init__(self, a, g, s, nu):
        self.a = a
        n, m = a.shape
        self.dual_space = n <= m
        if self.dual_space:
            self.d = g / s
            mat = (a * self.d) @ a.T
            mat[np.diag_indices(n)] += 1.0 / nu**2
        else:
            mat = (a.T * nu**2) @ a
            mat[np.diag_indices(m)] += s / g
        self.g, self.s, self.nu = g, s, nu
        self.factor = self._factor(mat)

    @staticmethod
    def _factor(mat):
        scale = np.sqrt(np.diag(mat))
        scaled = mat / scale[:, None] / scale[None, :]
        try:
            return scale, linalg.cho_factor(scaled, check_finite=False)
        except linalg.LinAlgError:
            scaled[np.diag_indices_from(scaled)] += 1e-12
            return scale, linalg.cho_factor(scaled, check_finite=False)

    def _solve(self, rhs):
        scale, cf = self.factor
        return linalg.cho_solve(cf, rhs / scale, check_finite=False) / scale

    def solve(self, rd, rp, rc):
        a, g, s, nu = self.a, self.g, self.s, self.nu
        if self.dual_space:
            dnu = self._solve(-rp - a @ (self.d * rd + rc / s))
            dg = self.d * (a.T @ dnu + rd) + rc / s
            ds = -rd - a.T @ dnu
        else:
            dg = self._solve(rd - a.T @ (nu**2 * rp) + rc / g)
            dnu = nu**2 * (-rp - a @ dg)
            ds = (rc - s * dg) / g
        return dg, ds, dnu


def _polish(a: np.ndarray, g: np.ndarray, cfg: SolverConfig, rounds: int = 10):
    """Re-solve on the support plus any violating columns.

    Once complementarity is tiny the n-space system is dominated by huge
    g/s entries on the support and loses precision.  The restricted problem
    has few columns, so its m-space system (where large entries sit on
    inactive atoms and are harmless) is both cheap and well conditioned.
    """
    m = a.shape[1]
    _, d = kkt_residual(a, g)
    active = (g > 1e-10) | (d > 0.5 * cfg.tol)
    for _ in range(rounds):
        idx = np.flatnonzero(active)
        sub, _, _ = _interior_point(a[:, idx], cfg, polish=False)
        full = np.zeros(m)
        full[idx] = sub
        gap, ok = _certificate(a, full, cfg.tol, cfg.prune_eps)
        if ok:
            return full, True
        _, d = kkt_residual(a, full)
        grow = (d > 0.5 * cfg.tol) & ~active
        if not np.any(grow):
            return full, False
        active |= grow
    return full, False


def _interior_point(a: np.ndarray, cfg: SolverConfig, polish: bool = True):
    n, m = a.shape
    polished = False
    g = np.full(m, 1.0 / m)
    f = a @ g
    nu = 1.0 / f
    grad = a.T @ nu
    nu *= 0.5 * n / grad.max()
    s = n - a.T @ nu
    best = (np.inf, g.copy())
    for it in range(1, cfg.max_iter + 1):
        gn = g / g.sum()
        gap, ok = _certificate(a, gn, cfg.tol, cfg.prune_eps)
        comp = float(g @ s)
        if gap < best[0]:
            best = (gap, gn.copy())
        if ok and comp <= 0.1 * cfg.tol:
            return gn, it - 1, True
        if polish and not polished and comp <= 0.1 * cfg.tol:
            polished = True
            gp, ok = _polish(a, gn, cfg)
            if ok:
                return gp, it - 1, True
        rd = a.T @ nu + s - n
        rp = a @ g - 1.0 / nu
        mu = comp / m
        system = _NewtonSystem(a, g, s, nu)
        # predictor
        dg, ds, dnu = system.solve(rd, rp, -g * s)
        alpha = min(1.0, _step_to_boundary(g, dg), _step_to_boundary(s, ds),
                    _step_to_boundary(nu, dnu))
        mu_aff = float((g + alpha * dg) @ (s + alpha * ds)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        rc = sigma * mu - g * s - dg * ds
        dg, ds, dnu = system.solve(rd, rp, rc)
        alpha = min(1.0, 0.99 * min(_step_to_boundary(g, dg), _step_to_boundary(s, ds),
                                     _step_to_boundary(nu, dnu)))
        g = g + alpha * dg
        s = s + alpha * ds
        nu = nu + alpha * dnu
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(nu))):
            break
        # guard against exact zeros from rounding
        g = np.maximum(g, 1e-300)
        s = np.maximum(s, 1e-300)
    gap, gn = best
    if polish and not polished:
        gp, ok = _polish(a, gn, cfg)
        if ok:
            return gp, cfg.max_iter, True
    return gn, cfg.max_iter, False


def _em(a: np.ndarray, cfg: SolverConfig, g0=None):
    m = a.shape[1]
    g = np.full(m, 1.0 / m) if g0 is None else np.asarray(g0, dtype=float)
    for it in range(1, cfg.max_iter + 1):
        g = em_step(a, g)
        if it % 50 == 0 or it == cfg.max_iter:
            _, ok = _certificate(a, g, cfg.tol, cfg.prune_eps)
            if ok:
                return g, it, True
    return g, cfg.max_iter, False


def solve_npmle(A: LikelihoodMatrix, cfg: SolverConfig | None = None, *, start=None) -> NpmleSolution:
    """Maximize sum_i log (A g)_i over the unit simplex.

    Parameters
    ----------
    A : LikelihoodMatrix
    cfg : SolverConfig, optional
    start : array_like, optional
        Initial weights for the EM baseline (ignored by the interior point path).

    Returns
    -------
    NpmleSolution
        On non-convergence the best iterate is returned with
        ``certified=False`` and a warning is issued.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(A, LikelihoodMatrix):
        A = LikelihoodMatrix(np.asarray(A, dtype=float), np.arange(np.shape(A)[1], dtype=float))
    raw = A.values
    # rescaling rows changes neither the optimal g nor the certificate
    rowmax = raw.max(axis=1)
    a = raw / rowmax[:, None]
    if cfg.algorithm == "em":
        g, iters, ok = _em(a, cfg, start)
    else:
        g, iters, ok = _interior_point(a, cfg)
    g = np.clip(g, 0.0, None)
    g /= g.sum()
    gap, ok_final = _certificate(a, g, cfg.tol, cfg.prune_eps)
    certified = ok and ok_final
    if not certified:
        warnings.warn(
            f"NPMLE not certified after {iters} iterations (kkt_gap={gap:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    f = raw @ g
    full = DiscreteDistribution(A.atoms, g)
    mixing = prune_atoms(full, cfg.prune_eps) if cfg.prune_eps > 0 else full
    if cfg.merge and mixing.atoms.ndim == 1 and isinstance(A.grid, object) and len(A.atoms) > 1:
        mixing = merge_adjacent(mixing, float(np.min(np.diff(A.atoms))))
    return NpmleSolution(
        mixing=mixing,
        weights=g,
        dual=1.0 / f,
        loglik=float(np.sum(np.log(f)) + np.sum(A.log_shift)),
        kkt_gap=gap,
        iterations=iters,
        certified=certified,
    )
