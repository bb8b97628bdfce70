"""Empirical Bayes decision rules, posterior functionals and risk evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from .kernels import (
    Binomial,
    DiscreteDistribution,
    GaussianLocation,
    KernelSpec,
    Poisson,
)

__all__ = [
    "BinaryRule",
    "ShrinkageEstimate",
    "PosteriorSummary",
    "RobbinsTable",
    "CompoundRisk",
    "binary_two_point",
    "linear_shrinkage",
    "stigler_line",
    "posterior_summary",
    "tweedie_rule",
    "poisson_g_rule",
    "robbins_poisson",
    "moderated_t",
    "fit_inverse_chisq_hyper",
    "gaussian_hierarchy_posterior",
    "compound_risk",
    "stein_oracle_risk",
]

_P_CLAMP = 1e-6


# --------------------------------------------------------------------------
# two-point compound decision


@dataclass(frozen=True)
class BinaryRule:
    """Bayes rule for theta in {-1, +1} with P(theta = 1) = p and unit noise."""

    p: float

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")

    @property
    def threshold(self) -> float:
        return 0.5 * np.log(self.p / (1.0 - self.p))

    def decide(self, y):
        """sgn(y + threshold), with ties sent to +1."""
        return np.where(np.asarray(y, dtype=float) + self.threshold >= 0, 1.0, -1.0)

    def risk_at(self, p_true: float) -> float:
        """Per-coordinate misclassification rate when P(theta = 1) = p_true.

        This is the (2n)^-1 sum |theta_hat - theta| loss in expectation.
        """
        c = self.threshold
        return float(
            p_true * stats.norm.cdf(-1.0 - c) + (1.0 - p_true) * stats.norm.cdf(-1.0 + c)
        )

    @property
    def risk(self) -> float:
        return self.risk_at(self.p)


def binary_two_point(data=None, p: Optional[float] = None) -> BinaryRule:
    """Two-point rule from a known ``p`` or the plug-in (ybar + 1) / 2."""
    if p is None:
        y = np.asarray(data, dtype=float).ravel()
        if y.size == 0:
            raise ValueError("need data or p")
        p = (y.mean() + 1.0) / 2.0
    return BinaryRule(float(np.clip(p, _P_CLAMP, 1.0 - _P_CLAMP)))


# --------------------------------------------------------------------------
# linear shrinkage


@dataclass(frozen=True)
class ShrinkageEstimate:
    values: np.ndarray
    factor: float
    center: float


def linear_shrinkage(
    y,
    mode: Literal["james-stein", "efron-morris"] = "james-stein",
    positive_part: bool = False,
) -> ShrinkageEstimate:
    """James-Stein shrinkage toward 0 or Efron-Morris shrinkage toward ybar.

    James-Stein uses the factor 1 - (n-2)/S with S = sum y^2; Efron-Morris
    uses 1 - (n-3)/S~ with S~ = sum (y - ybar)^2.  ``positive_part`` clamps the
    factor at zero.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if mode == "james-stein":
        if n < 3:
            raise ValueError("James-Stein needs n >= 3")
        center, dof = 0.0, n - 2
    elif mode == "efron-morris":
        if n < 4:
            raise ValueError("Efron-Morris needs n >= 4")
        center, dof = float(y.mean()), n - 3
    else:
        raise ValueError(f"unknown shrinkage mode {mode!r}")
    ss = float(np.sum((y - center) ** 2))
    if ss == 0:
        if not positive_part:
            raise ValueError("zero sum of squares; shrinkage factor undefined")
        factor = 0.0
    else:
        factor = 1.0 - dof / ss
        if positive_part:
            factor = max(factor, 0.0)
    return ShrinkageEstimate(center + factor * (y - center), factor, center)


def stigler_line(y):
    """Estimated regression line of theta on y as ``(intercept, slope)``.

    slope = 1 - (n-2)/S~ and intercept = ybar (n-2)/S~, so the fitted line
    is ybar + slope (y - ybar).
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 4:
        raise ValueError("need n >= 4")
    ybar = float(y.mean())
    ss = float(np.sum((y - ybar) ** 2))
    if ss == 0:
        raise ValueError("zero sum of squares")
    k = (n - 2) / ss
    return ybar * k, 1.0 - k


# --------------------------------------------------------------------------
# posterior summaries under a discrete mixing distribution


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior mean, variance and atom weights for each observation.

    ``atom_weights`` has one row per observation and one column per atom of
    the mixing distribution.
    """

    mean: np.ndarray
    variance: np.ndarray
    atom_weights: np.ndarray
    atoms: np.ndarray

    def atom_posterior(self, i: int = 0) -> DiscreteDistribution:
        w = self.atom_weights[i]
        return DiscreteDistribution(self.atoms, w / w.sum())


def posterior_summary(kernel: KernelSpec, G: DiscreteDistribution, y) -> PosteriorSummary:
    """Posterior of the latent parameter given y, for any scalar-parameter kernel."""
    if G.atoms.ndim != 1:
        raise ValueError("posterior_summary needs scalar atoms")
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    t = G.atoms
    kernel.check_parameter(t)
    with np.errstate(divide="ignore"):
        logw = kernel.logpdf(yy[:, None], t[None, :]) + np.log(G.weights)[None, :]
    top = np.max(logw, axis=1)
    if not np.all(np.isfinite(top)):
        bad = int(np.flatnonzero(~np.isfinite(top))[0])
        raise ValueError(f"marginal density underflows at y={yy[bad]!r}")
    w = np.exp(logw - top[:, None])
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ t
    # central moments: E[t^2] - mean^2 cancels badly for tight posteriors
    var = np.einsum("ij,ij->i", w, (t[None, :] - mean[:, None]) ** 2)
    return PosteriorSummary(mean, var, w, t)


def tweedie_rule(kernel: GaussianLocation, G: DiscreteDistribution, y) -> PosteriorSummary:
    """Posterior mean y + sd^2 f'(y)/f(y) for a Gaussian kernel and discrete G."""
    if not isinstance(kernel, GaussianLocation) or np.ndim(kernel.sd) != 0:
        raise TypeError("tweedie_rule needs a GaussianLocation kernel with scalar sd")
    return posterior_summary(kernel, G, y)


def poisson_g_rule(G: DiscreteDistribution, y) -> PosteriorSummary:
    """Posterior mean of the Poisson rate under a discrete G."""
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(yy < 0) or np.any(yy != np.round(yy)):
        raise ValueError("counts must be nonnegative integers")
    return posterior_summary(Poisson(), G, yy)


@dataclass(frozen=True)
class RobbinsTable:
    """delta(y) = (y+1) f(y+1)/f(y) with ``defined`` False where f(y+1) or f(y) is 0."""

    y: np.ndarray
    freq: np.ndarray
    delta: np.ndarray
    defined: np.ndarray

    def __call__(self, y):
        yy = np.asarray(y, dtype=int)
        out = np.full(yy.shape, np.nan)
        inside = (yy >= 0) & (yy < self.y.size)
        out[inside] = self.delta[yy[inside]]
        return out


def robbins_poisson(counts) -> RobbinsTable:
    """Robbins' f-modeling Poisson rule from empirical frequencies.

    Monotonicity is not enforced.  Entries where f(y) = 0, or where the rule
    would rest on an unobserved f(y+1) beyond the largest count, are flagged.
    """
    c = np.asarray(counts).ravel()
    if c.size == 0:
        raise ValueError("no counts")
    if np.any(c < 0) or np.any(c != np.round(c)):
        raise ValueError("counts must be nonnegative integers")
    c = c.astype(int)
    freq = np.bincount(c, minlength=c.max() + 2) / c.size
    ys = np.arange(c.max() + 1)
    f0, f1 = freq[:-1], freq[1:]
    defined = (f0 > 0) & (f1 > 0)
    delta = np.full(ys.size, np.nan)
    delta[defined] = (ys[defined] + 1) * f1[defined] / f0[defined]
    return RobbinsTable(ys, freq[:-1], delta, defined)


# --------------------------------------------------------------------------
# limma-style variance shrinkage


def moderated_t(means, variances, J: int, v0: float, s0_sq: float):
    """Moderated t statistics and two-sided p-values.

    s~^2 = (v0 s0^2 + v s^2) / (v0 + v) with v = J - 1; p-values use a t
    distribution with v0 + v degrees of freedom.  ``v0 = inf`` gives
    s~^2 = s0^2 and normal p-values.
    """
    mu = np.asarray(means, dtype=float)
    s2 = np.asarray(variances, dtype=float)
    v = J - 1
    if v < 1:
        raise ValueError("need at least two replicates")
    if v0 < 0 or not s0_sq > 0:
        raise ValueError("need v0 >= 0 and s0^2 > 0")
    if np.any(s2 < 0):
        raise ValueError("variances must be nonnegative")
    if np.isinf(v0):
        s_tilde_sq = np.full_like(s2, s0_sq)
    else:
        s_tilde_sq = (v0 * s0_sq + v * s2) / (v0 + v)
    if np.any(s_tilde_sq <= 0):
        raise ValueError("moderated variance is zero")
    t = mu / np.sqrt(s_tilde_sq)
    df = v0 + v
    if np.isinf(df):
        p = 2.0 * stats.norm.sf(np.abs(t))
    else:
        p = 2.0 * stats.t.sf(np.abs(t), df)
    return t, p


def _trigamma_inverse(x: float) -> float:
    # trigamma is decreasing from +inf to 0 on (0, inf)
    lo, hi = 1e-8, 1.0
    while special.polygamma(1, hi) > x:
        hi *= 2.0
    return optimize.brentq(lambda a: special.polygamma(1, a) - x, lo, hi, xtol=1e-14)


def _inv_chisq_moments(s2: np.ndarray, v: float):
    z = np.log(s2)
    e = z - special.digamma(v / 2) + np.log(v / 2)
    ebar = float(e.mean())
    excess = float(np.var(e, ddof=1)) - float(special.polygamma(1, v / 2))
    if excess <= 0:
        return np.inf, float(np.exp(ebar))
    v0 = 2.0 * _trigamma_inverse(excess)
    return v0, float(np.exp(ebar + special.digamma(v0 / 2) - np.log(v0 / 2)))


def _inv_chisq_loglik(log_v0: float, log_s0: float, s2: np.ndarray, v: float) -> float:
    s0_sq = np.exp(log_s0)
    return float(np.sum(stats.f.logpdf(s2 / s0_sq, v, np.exp(log_v0)) - log_s0))


_V0_CAP = 1e6


def fit_inverse_chisq_hyper(variances, v: float):
    """Maximum likelihood (v0, s0^2) for sigma^-2 ~ chi2_{v0} / (v0 s0^2).

    The sample variances have the scaled-F marginal s^2 / s0^2 ~ F(v, v0).
    Starting values come from moments of log s^2.  When the variances show no
    excess dispersion (including all-equal input) ``v0`` is ``inf``.
    """
    s2 = np.asarray(variances, dtype=float).ravel()
    if s2.size < 10:
        raise ValueError("need at least 10 variances")
    if v < 1:
        raise ValueError("need v >= 1")
    if np.any(s2 <= 0):
        raise ValueError("variances must be positive")
    if np.ptp(s2) == 0:
        return np.inf, float(s2[0])
    v0_init, s0_init = _inv_chisq_moments(s2, v)
    if np.isinf(v0_init):
        v0_init = _V0_CAP / 10
    x0 = np.array([np.log(v0_init), np.log(s0_init)])
    res = optimize.minimize(
        lambda x: -_inv_chisq_loglik(x[0], x[1], s2, v),
        x0,
        method="L-BFGS-B",
        bounds=[(np.log(1e-3), np.log(_V0_CAP)), (None, None)],
    )
    log_v0, log_s0 = res.x
    if log_v0 >= np.log(_V0_CAP) - 1e-6:
        # boundary: the chi-square limit, where the MLE of s0^2 is the mean
        return np.inf, float(s2.mean())
    return float(np.exp(log_v0)), float(np.exp(log_s0))


# --------------------------------------------------------------------------
# Gaussian hierarchy


def _chol(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


def gaussian_hierarchy_posterior(A1, C1, A2, C2, theta2, y):
    """Posterior and marginal moments for y ~ N(A1 th1, C1), th1 ~ N(A2 th2, C2).

    Returns ``(B b, B, A1 A2 th2, C1 + A1 C2 A1')`` where
    B^-1 = A1' C1^-1 A1 + C2^-1 and b = A1' C1^-1 y + C2^-1 A2 th2.
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    C1 = np.atleast_2d(np.asarray(C1, dtype=float))
    C2 = np.atleast_2d(np.asarray(C2, dtype=float))
    th2 = np.atleast_1d(np.asarray(theta2, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    L1 = _chol(C1, "C1")
    L2 = _chol(C2, "C2")
    # whitened forms avoid explicit inverses
    W1 = np.linalg.solve(L1, A1)
    wy = np.linalg.solve(L1, y)
    prior_mean = A2 @ th2
    W2 = np.linalg.solve(L2, np.eye(L2.shape[0]))
    precision = W1.T @ W1 + W2.T @ W2
    b = W1.T @ wy + W2.T @ (W2 @ prior_mean)
    Lp = np.linalg.cholesky(precision)
    B = np.linalg.solve(Lp.T, np.linalg.solve(Lp, np.eye(precision.shape[0])))
    B = 0.5 * (B + B.T)
    post_mean = B @ b
    return post_mean, B, A1 @ prior_mean, C1 + A1 @ C2 @ A1.T


# --------------------------------------------------------------------------
# compound (Bayes) risk


@dataclass(frozen=True)
class CompoundRisk:
    """Bayes risk of a separable rule, plus the Stein-identity oracle risk.

    ``oracle_risk`` is only computed for Gaussian kernels; it is the risk of
    the Tweedie rule for the same G, from sd^2 + 4 sd^4 E[(sqrt f)''/sqrt f].
    """

    risk: float
    oracle_risk: Optional[float] = None

    def __float__(self) -> float:
        return float(self.risk)


def _loss(kind: str) -> Callable:
    if kind == "squared":
        return lambda d, t: (d - t) ** 2
    if kind == "absolute":
        return lambda d, t: np.abs(d - t)
    raise ValueError(f"unknown loss {kind!r}")


_GH64 = np.polynomial.hermite.hermgauss(64)
_GH128 = np.polynomial.hermite.hermgauss(128)


def _gauss_hermite(fn, theta: float, sd: float, nodes) -> float:
    x, w = nodes
    y = theta + np.sqrt(2.0) * sd * x
    return float(np.sum(w * fn(y)) / np.sqrt(np.pi))


def _gaussian_atom_risk(rule, loss, theta: float, sd: float) -> float:
    def integrand(y):
        return loss(np.asarray(rule(y), dtype=float), theta)

    r64 = _gauss_hermite(integrand, theta, sd, _GH64)
    r128 = _gauss_hermite(integrand, theta, sd, _GH128)
    if abs(r64 - r128) <= 1e-10 * max(1.0, abs(r128)):
        return r128

    # non-smooth rule: adaptive quadrature over +-12 sd
    def dens(y):
        return float(integrand(np.array([y]))[0]) * stats.norm.pdf(y, theta, sd)

    lo, hi = theta - 12 * sd, theta + 12 * sd
    pieces = np.linspace(lo, hi, 25)
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        val, err = integrate.quad(dens, a, b, limit=200, epsabs=1e-12, epsrel=1e-10)
        if not np.isfinite(val) or err > 1e-7:
            raise RuntimeError("quadrature did not converge")
        total += val
    return total


def _discrete_support(kernel, t_max: float) -> np.ndarray:
    if isinstance(kernel, Poisson):
        top = int(stats.poisson.isf(1e-16, t_max)) + 5
        return np.arange(top + 1, dtype=float)
    if isinstance(kernel, Binomial):
        return np.arange(int(np.ravel(kernel.trials)[0]) + 1, dtype=float)
    raise TypeError("unsupported discrete kernel")


def stein_oracle_risk(G: DiscreteDistribution, sd: float = 1.0) -> float:
    """Risk of the oracle Tweedie rule through Stein's unbiased risk identity."""
    t, g = G.atoms, G.weights
    x, w = _GH128
    total = 0.0
    for tk, gk in zip(t, g):
        y = tk + np.sqrt(2.0) * sd * x
        z = (y[:, None] - t[None, :]) / sd
        logphi = -0.5 * z * z
        top = logphi.max(axis=1, keepdims=True)
        phi = np.exp(logphi - top) * g[None, :]
        f0 = phi.sum(axis=1)
        f1 = (phi * (-z / sd)).sum(axis=1)
        f2 = (phi * ((z * z - 1.0) / sd**2)).sum(axis=1)
        # (sqrt f)'' / sqrt f = f''/(2f) - f'^2/(4 f^2); common scale cancels
        val = f2 / (2 * f0) - (f1 / f0) ** 2 / 4
        total += gk * float(np.sum(w * val) / np.sqrt(np.pi))
    return sd**2 + 4.0 * sd**4 * total


def compound_risk(
    rule: Callable,
    G: DiscreteDistribution,
    kernel: KernelSpec,
    loss: Literal["squared", "absolute"] = "squared",
    loss_scale: float = 1.0,
) -> CompoundRisk:
    """Integrated risk sum_k g_k E[L(delta(Y), t_k) | t_k] of a separable rule.

    Gaussian kernels are integrated with 64/128-node Gauss-Hermite per atom,
    switching to adaptive quadrature when the two disagree; discrete kernels
    are summed exactly over their (tail-truncated) support.
    """
    lf = _loss(loss)
    if G.atoms.ndim != 1:
        raise ValueError("compound_risk needs scalar atoms")
    if isinstance(kernel, GaussianLocation):
        sd = float(kernel.sd)
        risk = sum(
            gk * _gaussian_atom_risk(rule, lf, tk, sd) for tk, gk in zip(G.atoms, G.weights)
        )
        return CompoundRisk(loss_scale * risk, stein_oracle_risk(G, sd))
    if isinstance(kernel, (Poisson, Binomial)):
        ys = _discrete_support(kernel, float(G.atoms.max()))
        delta = np.asarray(rule(ys), dtype=float)
        risk = 0.0
        for tk, gk in zip(G.atoms, G.weights):
            pk = np.exp(kernel.logpdf(ys, tk))
            risk += gk * float(np.sum(pk * lf(delta, tk)))
        return CompoundRisk(loss_scale * risk)
    raise TypeError(f"compound_risk does not support {type(kernel).__name__}")
