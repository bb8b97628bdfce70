"""Observation kernels, support grids and mixture likelihood matrices.

Every kernel is evaluated in log space and exponentiated once.  Per-observation
kernel parameters (standard deviations, trial counts, gamma shapes) travel with
the kernel object and broadcast against the data, never against the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import gammaln

__all__ = [
    "Grid",
    "GaussianLocation",
    "Poisson",
    "Binomial",
    "GammaScale",
    "StudentTLocation",
    "KernelSpec",
    "LikelihoodMatrix",
    "DiscreteDistribution",
    "UnsupportedObservationError",
    "build_grid",
    "log_grid",
    "kernel_density",
    "log_kernel_matrix",
    "build_likelihood_matrix",
    "marginal_density",
]

_LOG_2PI = np.log(2.0 * np.pi)
# rows whose every entry falls below this are unsupportable on the grid
_ROW_FLOOR = 1e-300


class UnsupportedObservationError(ValueError):
    """An observation has (numerically) zero likelihood at every grid point."""

    def __init__(self, index: int, value=None):
        self.index = int(index)
        self.value = value
        super().__init__(
            f"observation {self.index} (value={value!r}) has zero likelihood "
            "at every grid point; widen the grid"
        )


@dataclass(frozen=True)
class Grid:
    """Strictly increasing, finite support grid t_1 < ... < t_m."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float)).copy()
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("grid must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.size

    @property
    def step(self) -> float:
        """Smallest spacing between neighbouring points (0 for a single point)."""
        if self.points.size < 2:
            return 0.0
        return float(np.min(np.diff(self.points)))


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("data must be nonempty")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    return x


def build_grid(data, m: int = 300, padding: float = 0.05) -> Grid:
    """Equally spaced grid of ``m`` points covering the padded data range.

    The span is ``[min - padding*range, max + padding*range]``.  When all
    observations coincide at ``c`` the grid is the single point ``c`` for
    ``m == 1`` and ``linspace(c - 1, c + 1, m)`` otherwise.
    """
    x = _check_data(data)
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    if padding < 0:
        raise ValueError("padding must be nonnegative")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        if m == 1:
            return Grid(np.array([lo]))
        return Grid(np.linspace(lo - 1.0, hi + 1.0, m))
    if m == 1:
        return Grid(np.array([0.5 * (lo + hi)]))
    pad = padding * (hi - lo)
    return Grid(np.linspace(lo - pad, hi + pad, m))


def log_grid(lower: float, upper: float, m: int) -> Grid:
    """Log-spaced grid on ``[lower, upper]`` for positive scale parameters."""
    if not (lower > 0 and upper > 0):
        raise ValueError("log grid bounds must be positive")
    if upper < lower:
        raise ValueError("upper bound below lower bound")
    if upper == lower or m == 1:
        return Grid(np.array([np.sqrt(lower * upper)]))
    return Grid(np.geomspace(lower, upper, int(m)))


def _param(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class GaussianLocation:
    """y ~ N(t, sd^2); ``sd`` is a scalar or one value per observation."""

    sd: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        sd = _param(self.sd, "sd")
        if np.any(sd <= 0):
            raise ValueError("sd must be positive")
        object.__setattr__(self, "sd", sd)

    def check_parameter(self, t: np.ndarray) -> None:
        if not np.all(np.isfinite(t)):
            raise ValueError("location parameter must be finite")

    def logpdf(self, y, t):
        sd = self.sd
        z = (y - t) / sd
        return -0.5 * (_LOG_2PI + z * z) - np.log(sd)


@dataclass(frozen=True)
class Poisson:
    """y ~ Poisson(t) with t > 0."""

    def check_parameter(self, t: np.ndarray) -> None:
        if np.any(t <= 0):
            raise ValueError("Poisson rate must be positive")

    def logpdf(self, y, t):
        return y * np.log(t) - t - gammaln(y + 1.0)


@dataclass(frozen=True)
class Binomial:
    """y ~ Bin(trials, t) with t in (0, 1); ``trials`` scalar or per observation."""

    trials: Union[int, np.ndarray] = 1

    def __post_init__(self):
        k = np.asarray(self.trials)
        if np.any(k < 1) or np.any(np.asarray(k, dtype=float) != np.round(k)):
            raise ValueError("trials must be integers >= 1")
        object.__setattr__(self, "trials", np.asarray(k, dtype=float))

    def check_parameter(self, t: np.ndarray) -> None:
        if np.any((t <= 0) | (t >= 1)):
            raise ValueError("binomial probability must lie in (0, 1)")

    def logpdf(self, y, t):
        k = self.trials
        log_choose = gammaln(k + 1.0) - gammaln(y + 1.0) - gammaln(k - y + 1.0)
        return log_choose + y * np.log(t) + (k - y) * np.log1p(-t)


@dataclass(frozen=True)
class GammaScale:
    """s ~ Gamma(shape, scale = t / shape), so E[s] = t; t > 0."""

    shape: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        r = _param(self.shape, "shape")
        if np.any(r <= 0):
            raise ValueError("shape must be positive")
        object.__setattr__(self, "shape", r)

    def check_parameter(self, t: np.ndarray) -> None:
        if np.any(t <= 0):
            raise ValueError("gamma scale parameter must be positive")

    def logpdf(self, y, t):
        r = self.shape
        return (
            (r - 1.0) * np.log(y) - y * r / t - gammaln(r) - r * np.log(t / r)
        )


@dataclass(frozen=True)
class StudentTLocation:
    """(y - t) / scale ~ t_df; ``df`` and ``scale`` scalar or per observation."""

    df: Union[float, np.ndarray] = 1.0
    scale: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        df = _param(self.df, "df")
        scale = _param(self.scale, "scale")
        if np.any(df <= 0):
            raise ValueError("df must be positive")
        if np.any(scale <= 0):
            raise ValueError("scale must be positive")
        object.__setattr__(self, "df", df)
        object.__setattr__(self, "scale", scale)

    def check_parameter(self, t: np.ndarray) -> None:
        if not np.all(np.isfinite(t)):
            raise ValueError("location parameter must be finite")

    def logpdf(self, y, t):
        v, s = self.df, self.scale
        z = (y - t) / s
        return (
            gammaln(0.5 * (v + 1.0))
            - gammaln(0.5 * v)
            - 0.5 * np.log(v * np.pi)
            - np.log(s)
            - 0.5 * (v + 1.0) * np.log1p(z * z / v)
        )


KernelSpec = Union[GaussianLocation, Poisson, Binomial, GammaScale, StudentTLocation]


def _column(param, n: int) -> np.ndarray:
    """Reshape a scalar or length-n parameter so it broadcasts over rows."""
    arr = np.asarray(param, dtype=float)
    if arr.ndim == 0:
        return arr
    if arr.size != n:
        raise ValueError(f"per-observation parameter has length {arr.size}, expected {n}")
    return arr.reshape(n, 1)


def _rowwise(kernel: KernelSpec, n: int) -> KernelSpec:
    if isinstance(kernel, GaussianLocation):
        return GaussianLocation(_column(kernel.sd, n))
    if isinstance(kernel, Binomial):
        return Binomial(_column(kernel.trials, n))
    if isinstance(kernel, GammaScale):
        return GammaScale(_column(kernel.shape, n))
    if isinstance(kernel, StudentTLocation):
        return StudentTLocation(_column(kernel.df, n), _column(kernel.scale, n))
    return kernel


def _check_observations(kernel: KernelSpec, y: np.ndarray) -> None:
    if isinstance(kernel, (Poisson, Binomial)):
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("count data must be nonnegative integers")
        if isinstance(kernel, Binomial):
            k = np.ravel(kernel.trials)
            if np.any(y > (k if k.size == y.size else k[0])):
                raise ValueError("binomial count exceeds number of trials")
    if isinstance(kernel, GammaScale) and np.any(y <= 0):
        raise ValueError("gamma observations must be positive")


def kernel_density(kernel: KernelSpec, observation, t) -> float:
    """phi(y | t) for a single observation and parameter value."""
    t_arr = np.asarray(t, dtype=float)
    kernel.check_parameter(t_arr)
    y = np.asarray(observation, dtype=float)
    _check_observations(kernel, np.atleast_1d(y))
    return float(np.exp(kernel.logpdf(y, t_arr)))


def log_kernel_matrix(kernel: KernelSpec, data, grid: Grid) -> np.ndarray:
    """n x m matrix of log phi(y_i | t_j)."""
    y = _check_data(data)
    t = grid.points
    kernel.check_parameter(t)
    _check_observations(kernel, y)
    k = _rowwise(kernel, y.size)
    return k.logpdf(y[:, None], t[None, :])


@dataclass(frozen=True)
class LikelihoodMatrix:
    """Mixture constraint matrix with entries phi(y_i | t_j).

    ``log_shift`` holds a per-row constant c_i such that the true likelihood is
    ``values[i, j] * exp(c_i)``; it is zero unless rows were rescaled.
    ``grid`` is a :class:`Grid` for univariate problems or an (m, d) array of
    atoms for multivariate ones.
    """

    values: np.ndarray
    grid: object
    log_shift: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.asarray(self.values, dtype=float)
        if a.ndim != 2:
            raise ValueError("likelihood matrix must be 2-d")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("likelihood entries must be finite and nonnegative")
        empty = np.flatnonzero(~np.any(a > 0, axis=1))
        if empty.size:
            raise UnsupportedObservationError(empty[0])
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "values", a)
        shift = np.zeros(a.shape[0]) if self.log_shift is None else np.asarray(self.log_shift, float)
        if shift.shape != (a.shape[0],):
            raise ValueError("log_shift must have one entry per row")
        object.__setattr__(self, "log_shift", shift)
        if self.atoms.shape[0] != a.shape[1]:
            raise ValueError("grid size does not match the number of columns")

    @property
    def shape(self):
        return self.values.shape

    @property
    def atoms(self) -> np.ndarray:
        if isinstance(self.grid, Grid):
            return self.grid.points
        return np.asarray(self.grid, dtype=float)

    @classmethod
    def from_log(cls, log_values: np.ndarray, grid, *, data=None) -> "LikelihoodMatrix":
        """Build from log entries, subtracting each row's maximum."""
        logv = np.asarray(log_values, dtype=float)
        rowmax = np.max(logv, axis=1)
        bad = np.flatnonzero(~np.isfinite(rowmax))
        if bad.size:
            value = None if data is None else np.ravel(data)[bad[0]]
            raise UnsupportedObservationError(bad[0], value)
        return cls(np.exp(logv - rowmax[:, None]), grid, rowmax)

    def log_mixture(self, weights) -> np.ndarray:
        """log f_i including the row shifts."""
        f = self.values @ np.asarray(weights, dtype=float)
        return np.log(f) + self.log_shift


def build_likelihood_matrix(kernel: KernelSpec, data, grid: Grid) -> LikelihoodMatrix:
    """A[i, j] = phi(y_i | t_j), unshifted.

    Raises :class:`UnsupportedObservationError` naming the first observation
    whose row underflows everywhere.
    """
    y = _check_data(data)
    logv = log_kernel_matrix(kernel, y, grid)
    with np.errstate(under="ignore"):
        a = np.exp(logv)
    dead = np.flatnonzero(np.all(a < _ROW_FLOOR, axis=1))
    if dead.size:
        raise UnsupportedObservationError(dead[0], float(y[dead[0]]))
    return LikelihoodMatrix(a, grid)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Atoms with probability masses summing to one.

    Atoms are scalars (shape (m,)) or pairs (shape (m, 2)); for pairs the second
    coordinate is a scale and must be positive.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).copy()
        w = np.asarray(self.weights, dtype=float).ravel().copy()
        if atoms.ndim == 0:
            atoms = atoms.reshape(1)
        if atoms.shape[0] != w.size:
            raise ValueError("atoms and weights differ in length")
        if w.size == 0:
            raise ValueError("distribution needs at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if atoms.ndim == 2 and np.any(atoms[:, 1] <= 0):
            raise ValueError("scale coordinates must be positive")
        atoms.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, atoms, weights) -> "DiscreteDistribution":
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        return cls(atoms, w / w.sum())

    @classmethod
    def point_mass(cls, atom) -> "DiscreteDistribution":
        return cls(np.asarray([atom], dtype=float), np.ones(1))

    def __len__(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def marginal(self, axis: int) -> "DiscreteDistribution":
        """Marginal of one coordinate of a bivariate distribution, atoms merged."""
        if self.atoms.ndim != 2:
            raise ValueError("marginal requires bivariate atoms")
        vals, inv = np.unique(self.atoms[:, axis], return_inverse=True)
        w = np.bincount(inv, weights=self.weights)
        return DiscreteDistribution(vals, w / w.sum())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.atoms[idx]


def marginal_density(A: LikelihoodMatrix, g: DiscreteDistribution) -> np.ndarray:
    """f = A g, including any row shifts; errors on a zero marginal."""
    if g.atoms.shape != A.atoms.shape or not np.allclose(g.atoms, A.atoms, rtol=0, atol=0):
        raise ValueError("mixing distribution atoms must coincide with the grid")
    f = A.values @ g.weights
    if np.any(f <= 0):
        raise ValueError(f"zero marginal density at observation {int(np.argmin(f))}")
    return f * np.exp(A.log_shift)
