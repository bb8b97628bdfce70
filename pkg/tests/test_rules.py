import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ebdeconv.kernels import Binomial, DiscreteDistribution, GaussianLocation, Poisson
from ebdeconv.rules import (
    BinaryRule,
    binary_two_point,
    compound_risk,
    fit_inverse_chisq_hyper,
    gaussian_hierarchy_posterior,
    linear_shrinkage,
    moderated_t,
    poisson_g_rule,
    robbins_poisson,
    stein_oracle_risk,
    stigler_line,
    tweedie_rule,
)
from oracles import lattice_posterior_mean, random_hierarchy

N01 = stats.norm


def discretized_normal(sd=1.0, m=801, width=8.0):
    t = np.linspace(-width * sd, width * sd, m)
    w = N01.pdf(t, scale=sd)
    return DiscreteDistribution(t, w / w.sum())


random_G = st.integers(0, 10**6).map(
    lambda s: (lambda r: DiscreteDistribution(np.sort(r.uniform(-4, 4, 6)) + np.arange(6) * 1e-3,
                                              r.dirichlet(np.ones(6))))(np.random.default_rng(s)))


class TestBinary:
    def test_symmetric_prior(self):
        r = binary_two_point(p=0.5)
        assert r.threshold == 0
        assert r.risk == pytest.approx(N01.cdf(-1), abs=1e-12)
        np.testing.assert_array_equal(r.decide([-0.3, 0.2]), [-1, 1])

    def test_threshold_549(self):
        assert binary_two_point(p=0.75).threshold == pytest.approx(0.549, abs=5e-4)

    def test_risk_reduction(self):
        ratio = binary_two_point(p=0.75).risk / N01.cdf(-1)
        assert 0.75 <= ratio <= 0.85

    def test_plugin_clamped(self):
        assert binary_two_point(data=[5.0, 7.0]).p == pytest.approx(1 - 1e-6)
        assert np.isfinite(binary_two_point(data=[-9.0]).threshold)

    def test_plugin(self):
        assert binary_two_point(data=[1, 1, -1, 1]).p == pytest.approx(0.75)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            BinaryRule(1.0)


class TestShrinkage:
    def test_exact_cancellation(self):
        y = np.array([1.0, 1.0, 0.0, 0.0])
        est = linear_shrinkage(y)
        assert est.factor == 0
        np.testing.assert_allclose(est.values, 0)

    def test_js_arithmetic(self):
        est = linear_shrinkage(np.ones(3))
        assert est.factor == pytest.approx(2 / 3)
        np.testing.assert_allclose(est.values, [2 / 3] * 3)

    def test_efron_morris_clamped(self):
        y = np.array([1.0, 1.1, 0.9, 1.05, 0.95])
        est = linear_shrinkage(y, "efron-morris", positive_part=True)
        np.testing.assert_allclose(est.values, y.mean())

    def test_zero_sum_of_squares(self):
        with pytest.raises(ValueError):
            linear_shrinkage(np.zeros(5))
        np.testing.assert_array_equal(linear_shrinkage(np.zeros(5), positive_part=True).values, 0)

    def test_minimum_sizes(self):
        with pytest.raises(ValueError):
            linear_shrinkage([1.0, 2.0])
        with pytest.raises(ValueError):
            linear_shrinkage([1.0, 2.0, 3.0], "efron-morris")

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), c=st.floats(-100, 100))
    def test_efron_morris_translation(self, seed, c):
        y = np.random.default_rng(seed).normal(size=8) * 3
        a = linear_shrinkage(y, "efron-morris").values
        b = linear_shrinkage(y + c, "efron-morris").values
        np.testing.assert_allclose(b, a + c, atol=1e-9 * (1 + abs(c)))

    def test_stigler(self):
        y = np.array([0.0, 1.0, 2.0, 3.0])
        ic, slope = stigler_line(y)
        ss = np.sum((y - y.mean()) ** 2)
        assert slope == pytest.approx(1 - 2 / ss)
        assert ic == pytest.approx(y.mean() * 2 / ss)

    def test_stigler_no_shrinkage_limit(self):
        y = np.linspace(-1000, 1000, 50)
        assert stigler_line(y)[1] == pytest.approx(1, abs=1e-5)

    def test_stigler_flat(self):
        # S~ = n - 2 gives slope 0 and a constant line at ybar
        y = np.array([1.0, 0.0, 1.0, 0.0]) * np.sqrt(2)
        ic, slope = stigler_line(y)
        assert slope == pytest.approx(0, abs=1e-12)
        assert ic == pytest.approx(y.mean())

    def test_stigler_oracle_slope(self):
        # sigma0^2 = 1: the line approaches slope 1/2
        rng = np.random.default_rng(0)
        y = rng.normal(size=200_000) + rng.normal(size=200_000)
        assert stigler_line(y)[1] == pytest.approx(0.5, abs=0.01)


class TestTweedie:
    def test_point_mass(self):
        post = tweedie_rule(GaussianLocation(1.0), DiscreteDistribution.point_mass(1.5), [-3, 0, 4])
        np.testing.assert_allclose(post.mean, 1.5)
        np.testing.assert_allclose(post.variance, 0)

    def test_two_point_tanh(self):
        G = DiscreteDistribution(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        post = tweedie_rule(GaussianLocation(1.0), G, [1.0])
        assert post.mean[0] == pytest.approx(np.tanh(1.0), abs=1e-12)
        np.testing.assert_allclose(post.atom_posterior(0).weights.sum(), 1.0)

    def test_conjugate(self):
        post = tweedie_rule(GaussianLocation(1.0), discretized_normal(), [2.0])
        assert post.mean[0] == pytest.approx(1.0, abs=1e-2)
        assert post.variance[0] == pytest.approx(0.5, abs=1e-2)

    def test_far_tail_no_underflow(self):
        G = DiscreteDistribution(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        post = tweedie_rule(GaussianLocation(1.0), G, [60.0])
        assert post.mean[0] == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(G=random_G)
    def test_monotone_and_variance(self, G):
        y = np.linspace(-8, 8, 200)
        post = tweedie_rule(GaussianLocation(1.0), G, y)
        assert np.all(np.diff(post.mean) >= -1e-12)
        assert np.all(post.variance >= -1e-12)

    @settings(max_examples=20, deadline=None)
    @given(G=random_G, y=st.floats(-5, 5))
    def test_derivative_identity(self, G, y):
        h = 1e-4
        k = GaussianLocation(1.0)
        m = tweedie_rule(k, G, [y - h, y + h]).mean
        slope = (m[1] - m[0]) / (2 * h)
        assert slope == pytest.approx(tweedie_rule(k, G, [y]).variance[0], abs=1e-6)


class TestPoisson:
    def test_point_mass(self):
        post = poisson_g_rule(DiscreteDistribution.point_mass(3.0), np.arange(6))
        np.testing.assert_allclose(post.mean, 3.0)

    def test_two_atom_y0(self):
        G = DiscreteDistribution(np.array([1.0, 4.0]), np.array([0.5, 0.5]))
        expect = (np.exp(-1) + 4 * np.exp(-4)) / (np.exp(-1) + np.exp(-4))
        assert poisson_g_rule(G, [0]).mean[0] == pytest.approx(expect, rel=1e-12)
        assert np.all(np.diff(poisson_g_rule(G, np.arange(11)).mean) >= 0)

    def test_robbins_arithmetic(self):
        counts = [0] * 5 + [1] * 3 + [2] * 2
        tab = robbins_poisson(counts)
        assert tab(0) == pytest.approx(0.6)
        assert tab(1) == pytest.approx(4 / 3)
        assert not tab.defined[2]

    def test_robbins_constant(self):
        tab = robbins_poisson([3, 3, 3])
        assert not tab.defined[3]
        assert np.isnan(tab(3))

    def test_robbins_monte_carlo(self):
        counts = np.random.default_rng(0).poisson(2.0, 100_000)
        tab = robbins_poisson(counts)
        np.testing.assert_allclose(tab(np.arange(5)), 2.0, atol=0.1)

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            robbins_poisson([1, -1])


class TestModeratedT:
    def test_no_shrinkage(self):
        t, p = moderated_t([1.0, -2.0], [0.5, 2.0], 5, 0.0, 1.0)
        tt = np.array([1.0, -2.0]) / np.sqrt([0.5, 2.0])
        np.testing.assert_allclose(t, tt)
        np.testing.assert_allclose(p, 2 * stats.t.sf(np.abs(tt), 4))

    def test_full_shrinkage(self):
        t, p = moderated_t([1.5], [9.0], 4, 1e9, 1.0)
        assert t[0] == pytest.approx(1.5, rel=1e-6)
        assert p[0] == pytest.approx(2 * N01.sf(1.5), rel=1e-4)

    def test_zero_mean(self):
        t, p = moderated_t([0.0], [1.0], 3, 2.0, 1.0)
        assert t[0] == 0 and p[0] == pytest.approx(1.0)

    def test_hyper_equal(self):
        v0, s0 = fit_inverse_chisq_hyper(np.full(20, 2.5), 4)
        assert np.isinf(v0) and s0 == 2.5

    def test_hyper_too_few(self):
        with pytest.raises(ValueError):
            fit_inverse_chisq_hyper(np.ones(5) + np.arange(5), 4)

    def test_hyper_recovery_with_grid_oracle(self):
        rng = np.random.default_rng(0)
        v0, s0sq, v, n = 4.0, 1.0, 8, 5000
        sigma2 = v0 * s0sq / rng.chisquare(v0, n)
        s2 = sigma2 * rng.chisquare(v, n) / v
        est_v0, est_s0 = fit_inverse_chisq_hyper(s2, v)
        assert est_v0 == pytest.approx(v0, rel=0.2)
        assert est_s0 == pytest.approx(s0sq, rel=0.2)
        # brute-force likelihood grid as an independent check of the optimizer
        lv = np.linspace(np.log(1), np.log(20), 120)
        ls = np.linspace(np.log(0.3), np.log(3), 120)
        ll = np.array([[np.sum(stats.f.logpdf(s2 / np.exp(b), v, np.exp(a)) - b) for b in ls] for a in lv])
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        assert np.log(est_v0) == pytest.approx(lv[i], abs=2 * (lv[1] - lv[0]))
        assert np.log(est_s0) == pytest.approx(ls[j], abs=2 * (ls[1] - ls[0]))


class TestLindleySmith:
    def test_scalar_factor(self):
        for s0 in (0.3, 1.0, 4.0):
            m, B, mm, mc = gaussian_hierarchy_posterior(1, 1, 0, s0, 0, 2.0)
            assert m[0] == pytest.approx((1 - 1 / (1 + s0)) * 2.0, abs=1e-12)
            assert mc[0, 0] == pytest.approx(1 + s0)

    def test_flat_prior_gls(self):
        rng = np.random.default_rng(1)
        A1 = rng.normal(size=(6, 2))
        C1 = np.diag(rng.uniform(0.5, 2, 6))
        y = rng.normal(size=6)
        m, *_ = gaussian_hierarchy_posterior(A1, C1, np.eye(2), 1e12 * np.eye(2), np.zeros(2), y)
        Ci = np.linalg.inv(C1)
        gls = np.linalg.solve(A1.T @ Ci @ A1, A1.T @ Ci @ y)
        np.testing.assert_allclose(m, gls, atol=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_two_dim_lattice_oracle(self, seed):
        args = random_hierarchy(np.random.default_rng(seed))
        m, *_ = gaussian_hierarchy_posterior(*args)
        np.testing.assert_allclose(m, lattice_posterior_mean(*args), atol=1e-6)

    def test_non_pd(self):
        with pytest.raises(ValueError):
            gaussian_hierarchy_posterior(1, -1.0, 0, 1, 0, 0.0)
        with pytest.raises(ValueError):
            gaussian_hierarchy_posterior(np.eye(2), [[1, 0.5], [0.2, 1]], np.eye(2), np.eye(2), [0, 0], [0, 0])


class TestCompoundRisk:
    def test_mle_risk(self):
        G = DiscreteDistribution(np.array([-2.0, 0.5, 3.0]), np.array([0.2, 0.5, 0.3]))
        assert float(compound_risk(lambda y: y, G, GaussianLocation(1.0))) == pytest.approx(1.0, abs=1e-9)

    def test_conjugate_oracle(self):
        G = discretized_normal(m=201, width=7)
        k = GaussianLocation(1.0)
        res = compound_risk(lambda y: tweedie_rule(k, G, y).mean, G, k)
        assert res.risk == pytest.approx(0.5, abs=1e-3)
        assert res.oracle_risk == pytest.approx(res.risk, abs=1e-6)

    def test_binary_sign_rule(self):
        G = DiscreteDistribution(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        r = compound_risk(lambda y: np.where(y >= 0, 1.0, -1.0), G, GaussianLocation(1.0),
                          loss="absolute", loss_scale=0.5)
        assert r.risk == pytest.approx(0.15866, abs=1e-5)

    def test_poisson_exact_sum(self):
        G = DiscreteDistribution(np.array([1.0, 4.0]), np.array([0.5, 0.5]))
        r = compound_risk(lambda y: y, G, Poisson())
        assert r.risk == pytest.approx(2.5, abs=1e-9)  # E[Var] = E[lambda]

    def test_binomial_exact_sum(self):
        G = DiscreteDistribution(np.array([0.2, 0.7]), np.array([0.5, 0.5]))
        r = compound_risk(lambda y: y / 9, G, Binomial(9))
        assert r.risk == pytest.approx(0.5 * (0.2 * 0.8 + 0.7 * 0.3) / 9, abs=1e-12)

    @settings(max_examples=8, deadline=None)
    @given(G=random_G)
    def test_bayes_optimality(self, G):
        k = GaussianLocation(1.0)
        bayes = compound_risk(lambda y: tweedie_rule(k, G, y).mean, G, k).risk
        # linear rules with the coefficients they converge to under G
        m1, m2 = float(G.mean()), float(np.sum(G.weights * G.atoms**2))
        js = lambda y: (1 - 1 / (1 + m2)) * y
        em = lambda y: m1 + (1 - 1 / (1 + m2 - m1**2)) * (y - m1)
        for rule in (lambda y: y, js, em):
            assert bayes <= compound_risk(rule, G, k).risk + 1e-6

    @settings(max_examples=10, deadline=None)
    @given(G=random_G)
    def test_stein_identity(self, G):
        k = GaussianLocation(1.0)
        direct = compound_risk(lambda y: tweedie_rule(k, G, y).mean, G, k)
        assert stein_oracle_risk(G) == pytest.approx(direct.risk, abs=1e-5)
