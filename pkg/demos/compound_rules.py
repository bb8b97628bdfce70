"""Classical compound decision rules side by side."""

import numpy as np

from ebdeconv.kernels import DiscreteDistribution, GaussianLocation
from ebdeconv.rules import binary_two_point, compound_risk, linear_shrinkage, robbins_poisson, tweedie_rule

# two-point problem: theta = +-1, unit noise.  Knowing P(theta = 1) moves the
# threshold away from zero and lowers the misclassification rate.
minimax = binary_two_point(p=0.5)
informed = binary_two_point(p=0.75)
print(f"threshold at p=0.75: {informed.threshold:.3f}")
print(f"risk: sign rule {minimax.risk:.5f}, informed {informed.risk:.5f} "
      f"({100 * (1 - informed.risk / minimax.risk):.0f}% lower)")

# James-Stein at the origin: ten means, all zero
rng = np.random.default_rng(1)
Y = rng.standard_normal((20_000, 10))
js = np.mean([np.sum(linear_shrinkage(row).values ** 2) for row in Y])
print(f"James-Stein total risk {js:.3f} vs 10 for the MLE")

# Tweedie's rule for a known three-point prior, and its Bayes risk
G = DiscreteDistribution(np.array([-2.0, 0.0, 3.0]), np.array([0.3, 0.5, 0.2]))
k = GaussianLocation(1.0)
res = compound_risk(lambda y: tweedie_rule(k, G, y).mean, G, k)
print(f"Tweedie Bayes risk {res.risk:.4f} (Stein oracle {res.oracle_risk:.4f}, MLE 1)")

# Robbins' f-modeling rule for Poisson counts
counts = rng.poisson(rng.choice([1.0, 4.0], 2000))
tab = robbins_poisson(counts)
for yv, d, ok in list(zip(tab.y, tab.delta, tab.defined))[:6]:
    print(f"  y={yv}: {d:.3f}" if ok else f"  y={yv}: undefined")
