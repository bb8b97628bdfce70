import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ebdeconv.kernels import (
    Binomial,
    DiscreteDistribution,
    GammaScale,
    GaussianLocation,
    Grid,
    LikelihoodMatrix,
    Poisson,
    StudentTLocation,
    UnsupportedObservationError,
    build_grid,
    build_likelihood_matrix,
    kernel_density,
    log_grid,
    marginal_density,
)


class TestGrid:
    def test_equal_spacing(self):
        np.testing.assert_allclose(build_grid([0, 1], 3, 0).points, [0, 0.5, 1])

    def test_padding(self):
        np.testing.assert_allclose(build_grid([-2, 2], 2, 0.25).points, [-3, 3])

    def test_spans_sample(self):
        rng = np.random.default_rng(0)
        y = 3 + rng.lognormal(size=1000) + rng.standard_normal(1000)
        g = build_grid(y, 1000)
        assert len(g) == 1000
        assert g.points[0] <= y.min() and g.points[-1] >= y.max()

    def test_degenerate_data(self):
        assert build_grid([2.0, 2.0], 1).points.tolist() == [2.0]
        g = build_grid([2.0, 2.0], 5)
        np.testing.assert_allclose(g.points[[0, -1]], [1.0, 3.0])

    @pytest.mark.parametrize("bad", [[], [1.0, np.nan], [np.inf]])
    def test_bad_data(self, bad):
        with pytest.raises(ValueError):
            build_grid(bad, 10)

    def test_not_increasing(self):
        with pytest.raises(ValueError):
            Grid(np.array([0.0, 0.0, 1.0]))

    def test_log_grid(self):
        g = log_grid(0.1, 10, 3)
        np.testing.assert_allclose(g.points, [0.1, 1, 10])
        with pytest.raises(ValueError):
            log_grid(0, 1, 3)


class TestKernelDensity:
    def test_gaussian(self):
        assert kernel_density(GaussianLocation(1.0), 0.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)

    def test_poisson(self):
        assert kernel_density(Poisson(), 0, 2.0) == pytest.approx(np.exp(-2), rel=1e-14)

    def test_binomial(self):
        assert kernel_density(Binomial(9), 9, 0.5) == pytest.approx(0.5**9, rel=1e-13)

    def test_gamma_scale_matches_scipy(self):
        # shape r and scale t / r, so the mean is t
        r, t, s = 3.5, 2.0, 1.3
        assert kernel_density(GammaScale(r), s, t) == pytest.approx(
            stats.gamma.pdf(s, r, scale=t / r), rel=1e-12)

    def test_student_t_matches_scipy(self):
        assert kernel_density(StudentTLocation(4.0, 2.0), 1.0, -0.5) == pytest.approx(
            stats.t.pdf(1.0, 4.0, loc=-0.5, scale=2.0), rel=1e-12)

    def test_large_poisson_finite(self):
        assert kernel_density(Poisson(), 500, 480.0) > 0

    @pytest.mark.parametrize("kernel,t", [
        (Binomial(9), 1.5), (Poisson(), -1.0), (GammaScale(2.0), 0.0)])
    def test_parameter_domain(self, kernel, t):
        with pytest.raises(ValueError):
            kernel_density(kernel, 1, t)

    @pytest.mark.parametrize("kwargs", [dict(sd=0.0), dict(sd=-1.0)])
    def test_invalid_sd(self, kwargs):
        with pytest.raises(ValueError):
            GaussianLocation(**kwargs)

    def test_invalid_trials(self):
        with pytest.raises(ValueError):
            Binomial(0)

    @settings(max_examples=25, deadline=None)
    @given(t=st.floats(-5, 5), sd=st.floats(0.2, 3))
    def test_gaussian_integrates_to_one(self, t, sd):
        val, _ = integrate.quad(lambda y: kernel_density(GaussianLocation(sd), y, t), -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(t=st.floats(0.01, 30))
    def test_poisson_sums_to_one(self, t):
        ys = np.arange(0, 200)
        total = np.exp(Poisson().logpdf(ys, t)).sum()
        assert total == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(t=st.floats(0.001, 0.999), k=st.integers(1, 40))
    def test_binomial_sums_to_one(self, t, k):
        ys = np.arange(k + 1)
        assert np.exp(Binomial(k).logpdf(ys, t)).sum() == pytest.approx(1.0, abs=1e-10)


class TestLikelihoodMatrix:
    def test_single_gaussian(self):
        A = build_likelihood_matrix(GaussianLocation(1.0), [0.0], Grid(np.array([0.0])))
        np.testing.assert_allclose(A.values, [[stats.norm.pdf(0)]])

    def test_poisson_column(self):
        A = build_likelihood_matrix(Poisson(), [0, 1], Grid(np.array([1.0])))
        np.testing.assert_allclose(A.values, [[np.exp(-1)], [np.exp(-1)]])

    def test_per_observation_sd(self):
        grid = Grid(np.array([-1.0, 0.0, 2.0]))
        y = np.array([0.3, -0.2])
        sd = np.array([0.5, 2.0])
        A = build_likelihood_matrix(GaussianLocation(sd), y, grid)
        expect = stats.norm.pdf(y[:, None], grid.points[None, :], sd[:, None])
        np.testing.assert_allclose(A.values, expect, rtol=1e-13)

    def test_unsupported_row_named(self):
        with pytest.raises(UnsupportedObservationError) as err:
            build_likelihood_matrix(GaussianLocation(0.01), [0.0, 80.0], Grid(np.array([0.0, 1.0])))
        assert err.value.index == 1

    def test_binomial_rank(self):
        rng = np.random.default_rng(3)
        y = rng.binomial(9, rng.beta(2, 2, 320))
        A = build_likelihood_matrix(Binomial(9), y, Grid(np.linspace(1e-4, 1 - 1e-4, 100)))
        sv = np.linalg.svd(A.values, compute_uv=False)
        assert np.sum(sv > 1e-10 * sv[0]) <= 10

    def test_from_log_tracks_shift(self):
        logv = np.array([[-1000.0, -1001.0], [3.0, 1.0]])
        A = LikelihoodMatrix.from_log(logv, Grid(np.array([0.0, 1.0])))
        np.testing.assert_allclose(np.log(A.values) + A.log_shift[:, None], logv)

    def test_rejects_zero_row(self):
        with pytest.raises(ValueError):
            LikelihoodMatrix(np.array([[0.0, 0.0], [1.0, 0.0]]), Grid(np.array([0.0, 1.0])))


class TestDiscreteDistribution:
    def test_weights_sum(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.4]))

    def test_bivariate_theta_positive(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(np.array([[0.0, 0.0]]), np.array([1.0]))

    def test_marginal(self):
        H = DiscreteDistribution(np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 1.0]]), np.array([0.2, 0.3, 0.5]))
        M = H.marginal(0)
        np.testing.assert_allclose(M.atoms, [0.0, 1.0])
        np.testing.assert_allclose(M.weights, [0.5, 0.5])


class TestMarginalDensity:
    def test_arithmetic(self):
        A = LikelihoodMatrix(np.array([[1.0, 3.0]]), Grid(np.array([0.0, 1.0])))
        np.testing.assert_allclose(marginal_density(A, DiscreteDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.5]))), [2.0])

    def test_point_mass_column(self):
        grid = Grid(np.array([-1.0, 0.0, 1.0]))
        A = build_likelihood_matrix(GaussianLocation(1.0), [0.2, 1.5], grid)
        f = marginal_density(A, DiscreteDistribution(grid.points, np.array([0.0, 0.0, 1.0])))
        np.testing.assert_allclose(f, A.values[:, 2])

    def test_two_atom_gaussian(self):
        grid = Grid(np.array([-1.0, 1.0]))
        A = build_likelihood_matrix(GaussianLocation(1.0), [0.0], grid)
        f = marginal_density(A, DiscreteDistribution(grid.points, np.array([0.5, 0.5])))
        assert f[0] == pytest.approx(0.2419707245, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(lam=st.floats(0, 1), seed=st.integers(0, 10_000))
    def test_linearity(self, lam, seed):
        rng = np.random.default_rng(seed)
        grid = Grid(np.linspace(-2, 2, 7))
        A = build_likelihood_matrix(GaussianLocation(1.0), rng.normal(size=5), grid)
        g1 = DiscreteDistribution.normalized(grid.points, rng.random(7))
        g2 = DiscreteDistribution.normalized(grid.points, rng.random(7))
        mix = DiscreteDistribution.normalized(grid.points, lam * g1.weights + (1 - lam) * g2.weights)
        np.testing.assert_allclose(marginal_density(A, mix),
                                   lam * marginal_density(A, g1) + (1 - lam) * marginal_density(A, g2),
                                   rtol=1e-12)
