import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import multivariate_normal, norm

from mba.abc_ma2 import Ma2Params, simulate_ma2
from mba.baselines import (
    StudyEstimate,
    bootstrap_cov,
    css_estimate,
    css_objective,
    fema_conjugate,
    fema_fit,
    naive_fit,
    rema_fit,
    rema_grid_posterior,
)
from mba.baselines import _sum_gauss_loglik
from mba.belief import Dirac, Gaussian
from mba.errors import DimensionMismatch, DomainError, InputError
from mba.meta_model import GaussianNiw
from mba.sampler import McmcConfig
from mba.updater import PhiGrid, global_update

SPEC_1D = GaussianNiw([0.0], [[4.0]], 3.0, [[1.0]])
QUICK = McmcConfig(n_warmup=1500, n_keep=2000, n_chains=4, seed=2)


def ks_to_mu_marginal(draws, pmf, grid):
    n_mu = grid.axes[0].size
    cdf = np.cumsum(pmf.probs.reshape(n_mu, -1).sum(axis=1))
    xs = np.sort(np.ravel(draws))
    return np.max(np.abs(np.interp(xs, grid.axes[0], cdf) - np.arange(1, xs.size + 1) / xs.size))


def css_by_loop(y, t1, t2):
    e = np.zeros(len(y) + 2)
    for t, v in enumerate(y):
        e[t + 2] = v - t1 * e[t + 1] - t2 * e[t]
    return np.sum(e[2:] ** 2)


@pytest.fixture(scope="module")
def oned_grid():
    return PhiGrid.gaussian_1d(np.linspace(-4, 5, 400), np.linspace(1e-3, 25, 300))


@pytest.fixture(scope="module")
def oned_data():
    rng = np.random.default_rng(11)
    D = rng.normal(0.8, 1.0, 6)
    s2 = rng.uniform(0.1, 0.6, 6)
    return D, s2


class TestStudyEstimate:
    def test_rejects_non_spd(self):
        with pytest.raises(DomainError):
            StudyEstimate([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_coerces_shapes(self):
        e = StudyEstimate(0.5, 0.1)
        assert e.theta_hat.shape == (1,) and e.sigma_hat.shape == (1, 1)


class TestCss:
    def test_objective_matches_loop(self):
        y = np.random.default_rng(0).normal(size=15)
        pts = np.array([[0.0, 0.0], [0.6, 0.2], [-0.5, 0.3]])
        expected = [css_by_loop(y, *p) for p in pts]
        np.testing.assert_allclose(css_objective(y, pts), expected, rtol=1e-13)

    def test_consistent_at_large_n(self):
        y = simulate_ma2(Ma2Params(0.6, 0.2), 10_000, np.random.default_rng(1))
        np.testing.assert_allclose(css_estimate(y).as_array(), [0.6, 0.2], atol=0.05)

    def test_white_noise(self):
        y = np.random.default_rng(2).normal(size=10_000)
        np.testing.assert_allclose(css_estimate(y).as_array(), [0.0, 0.0], atol=0.05)

    def test_local_optimality(self):
        y = simulate_ma2(Ma2Params(0.4, -0.2), 40, np.random.default_rng(3))
        est = css_estimate(y).as_array()
        # the finest spacing after five halvings of the 200-point grid
        h = np.array([4.0, 2.0]) / 200 / 2**5
        f0 = css_objective(y, est)[0]
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                if a or b:
                    assert f0 <= css_objective(y, est + h * [a, b])[0]

    def test_sign_invariance(self):
        y = simulate_ma2(Ma2Params(0.3, 0.1), 25, np.random.default_rng(4))
        assert css_estimate(y) == css_estimate(-y)
        pts = np.array([[0.3, 0.1], [-0.8, 0.5]])
        np.testing.assert_array_equal(css_objective(y, pts), css_objective(-y, pts))

    def test_estimate_inside_triangle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            Ma2Params(*css_estimate(rng.normal(size=10)).as_array())

    def test_too_short(self):
        with pytest.raises(DomainError):
            css_estimate([1.0, 2.0])


class TestBootstrap:
    def test_short_series(self):
        cov = bootstrap_cov(Ma2Params(0.6, 0.2), 10, B=200, rng=np.random.default_rng(0))
        np.linalg.cholesky(cov)
        assert np.all((np.diag(cov) > 0) & (np.diag(cov) <= 1))

    def test_long_series_shrinks(self):
        short = bootstrap_cov(Ma2Params(0.6, 0.2), 10, B=30, rng=np.random.default_rng(1), grid_resolution=50)
        long = bootstrap_cov(Ma2Params(0.6, 0.2), 10_000, B=30, rng=np.random.default_rng(1), grid_resolution=50)
        ratio = np.diag(short) / np.diag(long)
        assert np.all((ratio >= 100) & (ratio <= 10_000))

    def test_seeded(self):
        a = bootstrap_cov(Ma2Params(0.6, 0.2), 10, B=20, rng=np.random.default_rng(2), grid_resolution=50)
        b = bootstrap_cov(Ma2Params(0.6, 0.2), 10, B=20, rng=np.random.default_rng(2), grid_resolution=50)
        np.testing.assert_array_equal(a, b)

    def test_needs_replicates(self):
        with pytest.raises(DomainError):
            bootstrap_cov(Ma2Params(0.6, 0.2), 10, B=3)


class TestMarginalLikelihood:
    @pytest.mark.parametrize("th_hat,s2,mu,s02", [(0.3, 0.2, 0.0, 1.0), (-1.2, 0.05, 0.4, 0.3), (2.0, 1.5, -0.5, 0.1)])
    def test_integrates_out_theta(self, th_hat, s2, mu, s02):
        direct = norm.pdf(th_hat, mu, np.sqrt(s02 + s2))
        val, _ = quad(lambda t: norm.pdf(th_hat, t, np.sqrt(s2)) * norm.pdf(t, mu, np.sqrt(s02)),
                      -np.inf, np.inf, epsabs=1e-13)
        assert val == pytest.approx(direct, abs=1e-6)

    def test_sum_matches_scipy(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2))
        covs = np.array([[[1.0, 0.2], [0.2, 0.5]]]) * rng.uniform(0.5, 2, (4, 1, 1))
        mean = np.array([0.1, -0.2])
        expected = sum(multivariate_normal(mean, c).logpdf(v) for v, c in zip(x, covs))
        assert _sum_gauss_loglik(x, mean, covs) == pytest.approx(expected, rel=1e-12)


class TestRema:
    def test_matches_grid_oracle(self, oned_grid, oned_data):
        D, s2 = oned_data
        est = [StudyEstimate(d, v) for d, v in zip(D, s2)]
        draws = rema_fit(est, SPEC_1D, QUICK)
        assert ks_to_mu_marginal(draws.mu, rema_grid_posterior(D, s2, SPEC_1D, oned_grid), oned_grid) < 0.05

    def test_equivalent_to_mba_with_flat_prior_beliefs(self, oned_grid, oned_data):
        D, s2 = oned_data
        mba = global_update(SPEC_1D, [Gaussian([d], [[v]]) for d, v in zip(D, s2)], oned_grid)
        draws = rema_fit([StudyEstimate(d, v) for d, v in zip(D, s2)], SPEC_1D, QUICK)
        assert ks_to_mu_marginal(draws.mu, mba, oned_grid) < 0.05

    def test_agreeing_precise_studies(self):
        est = [StudyEstimate([0.4, -0.1], 1e-8 * np.eye(2)) for _ in range(8)]
        spec = GaussianNiw([0.0, 0.0], np.eye(2), 4.0, 0.01 * np.eye(2))
        draws = rema_fit(est, spec, McmcConfig(n_warmup=1000, n_keep=1000, n_chains=2))
        np.testing.assert_allclose(draws.flat("mu").mean(axis=0), [0.4, -0.1], atol=0.05)

    def test_pinned_between_study_variance_matches_fema(self):
        rng = np.random.default_rng(4)
        est = [StudyEstimate(rng.normal(0.5, 0.3), rng.uniform(0.05, 0.2)) for _ in range(5)]
        spec = GaussianNiw([0.0], [[4.0]], 1e6, [[1e-10]])
        rema = rema_fit(est, spec, QUICK).mu[..., 0]
        fema, _ = fema_fit(est, [0.0], [[4.0]], QUICK)
        se = np.hypot(rema.std() / np.sqrt(rema.size / 10), fema.std() / np.sqrt(fema.size / 10))
        assert abs(rema.mean() - fema.mean()) < 4 * se

    def test_needs_two_studies(self):
        with pytest.raises(InputError):
            rema_fit([StudyEstimate(0.0, 1.0)], SPEC_1D)

    def test_grid_posterior_requires_1d(self, oned_grid):
        spec = GaussianNiw([0.0, 0.0], np.eye(2), 4.0, np.eye(2))
        with pytest.raises(InputError):
            rema_grid_posterior([0.0], [1.0], spec, oned_grid)


class TestFema:
    def test_single_study_flat_prior(self):
        S = np.array([[0.04, 0.01], [0.01, 0.02]])
        est = [StudyEstimate([0.6, 0.2], S)]
        draws, _ = fema_fit(est, [0.0, 0.0], 1e6 * np.eye(2), McmcConfig(n_warmup=1000, n_keep=4000, seed=1))
        flat = draws.reshape(-1, 2)
        np.testing.assert_allclose(flat.mean(axis=0), [0.6, 0.2], atol=0.01)
        np.testing.assert_allclose(np.cov(flat, rowvar=False), S, rtol=0.05, atol=0.05 * 0.02)

    def test_conjugate_formula(self):
        est = [StudyEstimate(1.0, 0.5), StudyEstimate(3.0, 0.25)]
        mean, cov = fema_conjugate(est, [0.0], [[1.0]])
        prec = 1 + 2 + 4
        np.testing.assert_allclose(cov, [[1 / prec]], rtol=1e-14)
        np.testing.assert_allclose(mean, [(2 * 1.0 + 4 * 3.0) / prec], rtol=1e-14)

    def test_sampler_matches_conjugate(self):
        rng = np.random.default_rng(5)
        est = [StudyEstimate(rng.normal([0.6, 0.2], 0.1), np.diag(rng.uniform(0.01, 0.05, 2))) for _ in range(6)]
        mean, _ = fema_conjugate(est, [0.5, 0.0], np.eye(2))
        draws, _ = fema_fit(est, [0.5, 0.0], np.eye(2), McmcConfig(n_warmup=1000, n_keep=3000, seed=3))
        for k in range(2):
            chains = draws[..., k]
            se = np.std([c.mean() for c in np.array_split(chains.ravel(), 40)], ddof=1) / np.sqrt(40)
            assert abs(chains.mean() - mean[k]) < 3 * se

    def test_overconfident_under_conflict(self):
        est = [StudyEstimate(v, 1e-4) for v in (-1.0, 0.0, 1.0, 2.0)]
        draws, _ = fema_fit(est, [0.0], [[10.0]], McmcConfig(n_warmup=500, n_keep=1000, seed=4))
        between = np.var([-1.0, 0.0, 1.0, 2.0])
        assert draws.var() < 1e-2 * between


class TestNaive:
    def test_matches_dirac_grid_oracle(self, oned_grid, oned_data):
        means = oned_data[0]
        oracle = global_update(SPEC_1D, [Dirac([m]) for m in means], oned_grid)
        draws = naive_fit(means, SPEC_1D, QUICK)
        assert ks_to_mu_marginal(draws.mu, oracle, oned_grid) < 0.05

    def test_equal_means_concentrate(self):
        spec = GaussianNiw([0.0, 0.0], np.eye(2), 4.0, 0.1 * np.eye(2))
        draws = naive_fit(np.tile([0.6, 0.2], (200, 1)) + 1e-6 * np.random.default_rng(0).normal(size=(200, 2)),
                          spec, McmcConfig(n_warmup=1000, n_keep=1000, n_chains=2))
        np.testing.assert_allclose(draws.flat("mu").mean(axis=0), [0.6, 0.2], atol=0.01)

    def test_dimension_check(self):
        spec = GaussianNiw([0.0, 0.0], np.eye(2), 4.0, np.eye(2))
        with pytest.raises(DimensionMismatch):
            naive_fit([[0.1, 0.2, 0.3]], spec, McmcConfig(n_warmup=5, n_keep=5, n_chains=1))
