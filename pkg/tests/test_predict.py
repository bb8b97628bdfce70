import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ebdeconv.kernels import DiscreteDistribution
from ebdeconv.predict import (
    DEFAULT_PROBS,
    PredictionEnsemble,
    UnitPosterior,
    arma_unit_posterior,
    density_transforms,
    increment_density_table,
    quantile_bands,
    simulate_arma_paths,
    simulate_paths,
    uniform_band,
    unit_posterior,
)
from ebdeconv.statespace import ArmaParams

TWO_ATOM = DiscreteDistribution(np.array([[-0.5, 0.25], [0.5, 1.0]]), np.array([0.5, 0.5]))


def point_mass(alpha, theta):
    return UnitPosterior(np.array([[alpha, theta]]), np.array([1.0]))


def ensemble_of(paths):
    paths = np.asarray(paths, dtype=float)
    return PredictionEnsemble(paths, 0.0, 0, paths.shape[0], 1, {})


class TestUnitPosterior:
    def test_point_mass_unchanged(self):
        H = DiscreteDistribution(np.array([[0.3, 0.7]]), np.array([1.0]))
        post = unit_posterior(H, [5.0, -3.0, 2.0], 0.4)
        assert post.weights.tolist() == [1.0]

    def test_prefix_at_atom_mean(self):
        H = DiscreteDistribution(np.array([[0.0, 0.01], [1.0, 0.01]]), np.array([0.5, 0.5]))
        prefix = 1.0 + 1e-3 * np.array([1.0, -1.0, 0.5, -0.5, 0.0])
        post = unit_posterior(H, prefix, 0.0)
        assert post.weights[1] >= 0.99

    def test_two_term_bayes(self):
        H = DiscreteDistribution(np.array([[0.0, 0.5], [1.0, 2.0]]), np.array([0.3, 0.7]))
        y = np.array([0.2, 0.9, -0.4])
        rho = 0.3
        z = y[1:] - rho * y[:-1]
        lik = [np.prod(stats.norm.pdf(z, (1 - rho) * a, np.sqrt(t))) for a, t in H.atoms]
        expect = H.weights * lik / np.dot(H.weights, lik)
        np.testing.assert_allclose(unit_posterior(H, y, rho).weights, expect, rtol=1e-12)

    def test_variance_upweights_matching_scale(self):
        H = DiscreteDistribution(np.array([[0.0, 0.5], [0.0, 4.0]]), np.array([0.5, 0.5]))
        rng = np.random.default_rng(0)
        z = rng.standard_normal(12)
        prefix = (z - z.mean()) / z.std(ddof=1) * np.sqrt(0.5)
        post = unit_posterior(H, prefix, 0.0)
        assert post.weights[0] > 0.5
        # the gamma likelihood ratio at S = theta_1
        k = prefix.size - 1
        r = (k - 1) / 2
        s = np.var(prefix[1:], ddof=1)
        lr = stats.gamma.pdf(s, r, scale=0.5 / r) / stats.gamma.pdf(s, r, scale=4.0 / r)
        assert lr > 1

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), rho=st.floats(-0.9, 0.9))
    def test_direct_matches_sufficient(self, seed, rho):
        rng = np.random.default_rng(seed)
        atoms = np.column_stack([rng.normal(size=6), rng.uniform(0.2, 3, 6)])
        H = DiscreteDistribution(atoms, rng.dirichlet(np.ones(6)))
        y = rng.normal(size=int(rng.integers(3, 12)))
        a = unit_posterior(H, y, rho, "direct").weights
        b = unit_posterior(H, y, rho, "sufficient").weights
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)

    def test_underflow(self):
        H = DiscreteDistribution(np.array([[0.0, 1e-6]]), np.array([1.0]))
        # a single extremely distant atom still normalizes in log space
        assert unit_posterior(H, [1e3, -1e3, 1e3], 0.0).weights[0] == 1.0

    def test_short_prefix(self):
        with pytest.raises(ValueError):
            unit_posterior(TWO_ATOM, [1.0], 0.5)

    def test_support_subset(self):
        post = unit_posterior(TWO_ATOM, [0.1, 0.4, 0.2], 0.2)
        assert post.atoms is TWO_ATOM.atoms
        assert post.weights.sum() == pytest.approx(1.0, abs=1e-14)


class TestSimulatePaths:
    def test_constant_when_theta_zero(self):
        ens = simulate_paths(point_mass(1.7, 0.0), 0.0, 3.0, horizon=4, m=5, M=3)
        assert np.all(ens.paths == 1.7)

    def test_shape(self):
        ens = simulate_paths(point_mass(0.0, 1.0), 0.5, 0.0, horizon=7, m=4, M=6)
        assert ens.paths.shape == (24, 7)
        assert ens.levels_with_start().shape == (24, 8)

    def test_standard_normal(self):
        m = M = 50
        horizon = 8
        ens = simulate_paths(point_mass(0.0, 1.0), 0.0, 5.0, horizon, m, M, seed=3)
        x = ens.paths.ravel()
        assert abs(x.mean()) <= 3 / np.sqrt(m * M * horizon)
        assert x.var() == pytest.approx(1.0, rel=0.05)

    def test_seed_determinism(self):
        post = unit_posterior(TWO_ATOM, [0.1, 0.4, 0.2], 0.3)
        a = simulate_paths(post, 0.3, 0.2, 6, 10, 10, seed=99, unit=4)
        b = simulate_paths(post, 0.3, 0.2, 6, 10, 10, seed=99, unit=4)
        assert np.array_equal(a.paths, b.paths)
        c = simulate_paths(post, 0.3, 0.2, 6, 10, 10, seed=99, unit=5)
        assert not np.array_equal(a.paths, c.paths)

    def test_draw_streams_independent_of_M(self):
        post = unit_posterior(TWO_ATOM, [0.1, 0.4, 0.2], 0.3)
        a = simulate_paths(post, 0.3, 0.2, 3, 4, 5, seed=1)
        b = simulate_paths(post, 0.3, 0.2, 3, 4, 8, seed=1)
        assert np.array_equal(a.paths, b.paths[:20])

    @pytest.mark.parametrize("drift", ["stationary-alpha", "raw-alpha"])
    def test_conditional_mean(self, drift):
        alpha, rho, y0, horizon = 2.0, 0.6, -1.0, 5
        ens = simulate_paths(point_mass(alpha, 1.0), rho, y0, horizon, 100, 100, seed=5, drift=drift)
        s = np.arange(1, horizon + 1)
        if drift == "stationary-alpha":
            expect = alpha * (1 - rho**s) + rho**s * y0
        else:
            expect = alpha * (1 - rho**s) / (1 - rho) + rho**s * y0
        se = ens.paths.std(axis=0) / np.sqrt(ens.paths.shape[0])
        assert np.all(np.abs(ens.paths.mean(axis=0) - expect) <= 3 * se)

    def test_invalid(self):
        with pytest.raises(ValueError):
            simulate_paths(point_mass(0, 1), 0.0, 0.0, horizon=0)
        with pytest.raises(ValueError):
            simulate_paths(point_mass(0, 1), 0.0, 0.0, horizon=2, drift="other")


class TestBands:
    def test_constant(self):
        bands = quantile_bands(ensemble_of(np.full((10, 3), 4.2)))
        assert np.all(bands.quantiles == 4.2)

    def test_linear_interpolation(self):
        bands = quantile_bands(ensemble_of([[1.0], [2.0], [3.0], [4.0]]), [0.5])
        assert bands.quantiles[0, 0] == 2.5

    def test_symmetric(self):
        ens = simulate_paths(point_mass(0.0, 1.0), 0.5, 0.0, 4, 50, 50, seed=2)
        q = quantile_bands(ens).quantiles
        med = q[:, list(DEFAULT_PROBS).index(0.5)]
        np.testing.assert_allclose(q[:, 0] + q[:, -1], 2 * med, atol=0.1)

    def test_monotone_and_header(self):
        ens = simulate_paths(point_mass(0.0, 1.0), 0.5, 0.0, 3, 10, 10)
        bands = quantile_bands(ens)
        assert np.all(np.diff(bands.quantiles, axis=1) >= 0)
        assert bands.header()[:3] == ["period", "p05", "p10"]
        assert bands.header(True)[-1] == "actual"
        assert len(bands.rows([1, 2, 3])[0]) == len(bands.header(True))

    def test_bad_probs(self):
        with pytest.raises(ValueError):
            quantile_bands(ensemble_of([[1.0]]), [0.5, 0.2])

    def test_uniform_limit_is_min_max(self):
        rng = np.random.default_rng(0)
        ens = ensemble_of(rng.normal(size=(100, 5)))
        lo, hi = uniform_band(ens, 0.999)
        np.testing.assert_array_equal(lo, ens.paths.min(axis=0))
        np.testing.assert_array_equal(hi, ens.paths.max(axis=0))

    def test_uniform_constant_zero_width(self):
        lo, hi = uniform_band(ensemble_of(np.full((20, 4), -1.0)), 0.9)
        assert np.all(hi - lo == 0)

    def test_uniform_wider_than_pointwise(self):
        rng = np.random.default_rng(1)
        ens = ensemble_of(rng.normal(size=(2500, 6)))
        lo, hi = uniform_band(ens, 0.9)
        q = quantile_bands(ens, [0.05, 0.95]).quantiles
        assert np.all(lo < q[:, 0]) and np.all(hi > q[:, 1])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), level=st.floats(0.5, 0.99))
    def test_uniform_covers_level(self, seed, level):
        rng = np.random.default_rng(seed)
        paths = rng.normal(size=(200, 4))
        lo, hi = uniform_band(ensemble_of(paths), level)
        inside = np.all((paths >= lo) & (paths <= hi), axis=1)
        assert inside.mean() >= level

    def test_uniform_needs_two_paths(self):
        with pytest.raises(ValueError):
            uniform_band(ensemble_of([[1.0, 2.0]]), 0.9)


class TestIncrementDensity:
    def test_transforms(self):
        logf, hel = density_transforms([1.0, 0.25, 0.0])
        assert logf[0] == 0.0 and hel[0] == -1.0
        assert logf[1] == pytest.approx(-1.3862943611) and hel[1] == -2.0
        assert np.isnan(logf[2]) and np.isnan(hel[2])

    def test_columns(self):
        x = np.random.default_rng(0).normal(size=500)
        tab = increment_density_table(x)
        assert tab.shape == (512, 4)
        assert tab[0, 0] < x.min() and tab[-1, 0] > x.max()

    def test_normal_log_concave(self):
        x = np.random.default_rng(7).standard_normal(100_000)
        tab = increment_density_table(x)
        lo, hi = np.quantile(x, [0.025, 0.975])
        keep = (tab[:, 0] >= lo) & (tab[:, 0] <= hi)
        assert np.max(np.diff(tab[keep, 2], 2)) <= 1e-3

    def test_ensemble_increments(self):
        ens = simulate_paths(point_mass(0.0, 1.0), 0.0, 0.0, 3, 20, 20)
        tab = increment_density_table(ens)
        x = np.diff(ens.levels_with_start(), axis=1).ravel()
        assert tab[0, 0] < x.min() and tab[-1, 0] > x.max()

    def test_scale_mixture_symmetric(self):
        # alpha-degenerate H: increments from a start at alpha are a scale mixture
        post = UnitPosterior(np.array([[0.0, 0.3], [0.0, 3.0]]), np.array([0.5, 0.5]))
        ens = simulate_paths(post, 0.5, 0.0, 4, 50, 200, seed=11)
        tab = increment_density_table(ens)
        d = np.linspace(0, 2, 41)
        f_plus = np.interp(d, tab[:, 0], tab[:, 1])
        f_minus = np.interp(-d, tab[:, 0], tab[:, 1])
        assert np.max(np.abs(f_plus - f_minus)) <= 0.02

    def test_too_few(self):
        with pytest.raises(ValueError):
            increment_density_table(np.arange(50.0))

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            increment_density_table(np.ones(200))


class TestArmaPrediction:
    def test_posterior_and_paths(self):
        p = ArmaParams(0.5, 0.15, 0.2, 0.5)
        G = DiscreteDistribution(np.array([-0.5, 0.5]), np.array([0.5, 0.5]))
        prefix = np.array([0.6, 0.4, 0.7, 0.5, 0.8])
        post = arma_unit_posterior(p, G, prefix)
        assert post.weights[1] > post.weights[0]
        a = simulate_arma_paths(p, post, prefix, 4, 10, 10, seed=3)
        b = simulate_arma_paths(p, post, prefix, 4, 10, 10, seed=3)
        assert a.paths.shape == (100, 4) and np.array_equal(a.paths, b.paths)

    def test_long_run_mean(self):
        p = ArmaParams(0.5, 0.15, 0.2, 0.5)
        post = UnitPosterior(np.array([1.0]), np.array([1.0]))
        ens = simulate_arma_paths(p, post, [1.0, 1.0, 1.0], 30, 40, 50, seed=1)
        tail = ens.paths[:, -1]
        assert abs(tail.mean() - 1.0) <= 3 * tail.std() / np.sqrt(tail.size)
