"""Posterior predictive fan for one unit, plus the increment-density transforms."""

import warnings

import numpy as np

from ebdeconv import datasets
from ebdeconv.panel import default_grids, fit_bivariate_heterogeneity, sufficient_stats
from ebdeconv.predict import (
    increment_density_table,
    quantile_bands,
    simulate_paths,
    uniform_band,
    unit_posterior,
)

rho, T0 = 0.5, 10
panel = datasets.ar1_demo_panel(np.random.default_rng(11), n=400, m=15)
prefixes = panel.truncate(T0)

# fit H on the first T0 periods of every unit
st = sufficient_stats(prefixes, rho, keep_first_at_zero=False)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    H = fit_bivariate_heterogeneity(st, *default_grids(st, (40, 40))).mixing

unit = 0
y = panel.series[unit]
post = unit_posterior(H, y[:T0], rho)
ens = simulate_paths(post, rho, y[T0 - 1], horizon=len(y) - T0, seed=5, unit=unit)

bands = quantile_bands(ens, [0.05, 0.25, 0.5, 0.75, 0.95])
lo, hi = uniform_band(ens, 0.9)
print("period  p05     p50     p95     uniform90           actual")
for s in range(ens.horizon):
    q = bands.quantiles[s]
    print(f"{s + 1:4d}  {q[0]:6.3f}  {q[2]:6.3f}  {q[4]:6.3f}  [{lo[s]:6.3f}, {hi[s]:6.3f}]  {y[T0 + s]:6.3f}")

# heavier than Gaussian tails show up as a convex log density and a concave -1/sqrt(f)
tab = increment_density_table(ens)
x, f, logf, hel = tab.T
mid = (x > np.quantile(x, 0.2)) & (x < np.quantile(x, 0.8))
print(f"largest second difference on the central grid: log f {np.nanmax(np.diff(logf[mid], 2)):.2e}, "
      f"-1/sqrt(f) {np.nanmax(np.diff(hel[mid], 2)):.2e}")
