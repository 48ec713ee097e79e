import numpy as np
import pytest
from scipy.stats import chisquare

from fedabc.errors import InsufficientDataError, ShapeError
from fedabc.gmm import GmmParams, fit_gmm_em, gmm_density, gmm_log_density, sample_gmm
from fedabc.rng import RngHandle
from fedabc.samplers import cholesky_pd

RNG = RngHandle(seed=31337)


def single_gaussian(mu=0.0, var=1.0):
    return GmmParams(
        pi=np.array([1.0]),
        mu=np.array([[mu]]),
        sigma=np.array([[[var]]]),
    )


class TestDensity:
    def test_standard_normal_at_zero(self):
        val = gmm_density(single_gaussian(), np.array([0.0]))
        assert abs(val - 1.0 / np.sqrt(2 * np.pi)) < 1e-9

    def test_duplicate_components_collapse(self):
        mu = np.array([[0.5, -1.0]])
        sig = np.array([[[1.2, 0.3], [0.3, 0.9]]])
        one = GmmParams(pi=np.array([1.0]), mu=mu, sigma=sig)
        two = GmmParams(
            pi=np.array([0.5, 0.5]),
            mu=np.vstack([mu, mu]),
            sigma=np.vstack([sig, sig]),
        )
        gen = RNG.child(1).generator()
        for _ in range(10):
            x = gen.standard_normal(2) * 3
            assert abs(gmm_density(one, x) - gmm_density(two, x)) < 1e-12

    def test_total_mass_by_quadrature(self):
        # Independent oracle: trapezoid integration of the density.
        params = GmmParams(
            pi=np.array([0.3, 0.7]),
            mu=np.array([[-2.0], [2.0]]),
            sigma=np.array([[[1.0]], [[1.0]]]),
        )
        xs = np.arange(-10.0, 10.0 + 1e-3, 1e-3).reshape(-1, 1)
        dens = gmm_density(params, xs)
        mass = np.trapezoid(dens, dx=1e-3)
        assert abs(mass - 1.0) < 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gmm_density(single_gaussian(), np.array([0.0, 1.0]))

    def test_permutation_invariance(self):
        gen = RNG.child(2).generator()
        k, d = 4, 3
        mu = gen.standard_normal((k, d))
        sigma = np.array([np.eye(d) * s for s in (0.5, 1.0, 2.0, 1.5)])
        pi = np.array([0.1, 0.2, 0.3, 0.4])
        base = GmmParams(pi=pi, mu=mu, sigma=sigma)
        for _ in range(5):
            perm = gen.permutation(k)
            shuffled = GmmParams(pi=pi[perm], mu=mu[perm], sigma=sigma[perm])
            x = gen.standard_normal(d)
            assert abs(gmm_density(base, x) - gmm_density(shuffled, x)) < 1e-12

    def test_log_density_finite(self):
        params = single_gaussian()
        assert np.isfinite(gmm_log_density(params, np.array([40.0])))


class TestSampling:
    def test_single_component_moments(self):
        params = single_gaussian(mu=5.0, var=4.0)
        draws, _ = sample_gmm(params, 100_000, RNG.child(10))
        assert abs(draws.mean() - 5.0) < 0.05
        assert abs(draws.var() - 4.0) < 0.1

    def test_zero_weight_component_never_drawn(self):
        params = GmmParams(
            pi=np.array([1.0, 0.0]),
            mu=np.array([[0.0], [100.0]]),
            sigma=np.array([[[1.0]], [[1.0]]]),
        )
        _, assign = sample_gmm(params, 500, RNG.child(11))
        assert np.all(assign.z == 0)

    def test_balanced_split(self):
        params = GmmParams(
            pi=np.array([0.5, 0.5]),
            mu=np.array([[-10.0], [10.0]]),
            sigma=np.array([[[1.0]], [[1.0]]]),
        )
        draws, _ = sample_gmm(params, 10_000, RNG.child(12))
        frac_neg = np.mean(draws[:, 0] < 0)
        assert 0.47 <= frac_neg <= 0.53

    def test_assignment_frequencies_match_pi(self):
        pi = np.array([0.2, 0.5, 0.3])
        params = GmmParams(
            pi=pi,
            mu=np.zeros((3, 1)),
            sigma=np.ones((3, 1, 1)),
        )
        n = 100_000
        _, assign = sample_gmm(params, n, RNG.child(13))
        counts = np.bincount(assign.z, minlength=3)
        result = chisquare(counts, f_exp=pi * n)
        assert result.pvalue > 1e-4

    def test_empty_request(self):
        draws, assign = sample_gmm(single_gaussian(), 0, RNG.child(14))
        assert draws.shape == (0, 1)
        assert assign.z.size == 0


class TestEm:
    def test_single_component_closed_form(self):
        gen = RNG.child(20).generator()
        data = gen.standard_normal((40, 3)) * 2.0 + np.array([1.0, -1.0, 0.5])
        fit = fit_gmm_em(data, 1, rng=RNG.child(21))
        np.testing.assert_allclose(fit.params.mu[0], data.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(
            fit.params.sigma[0], np.cov(data, rowvar=False, bias=True), atol=1e-10
        )

    def test_two_cluster_recovery(self):
        gen = RNG.child(22).generator()
        a = gen.standard_normal((200, 2)) + np.array([5.0, 5.0])
        b = gen.standard_normal((200, 2)) + np.array([-5.0, -5.0])
        data = np.vstack([a, b])
        fit = fit_gmm_em(data, 2, rng=RNG.child(23))
        truths = np.array([[5.0, 5.0], [-5.0, -5.0]])
        for truth in truths:
            nearest = min(np.linalg.norm(fit.params.mu - truth, axis=1))
            assert nearest < 0.15

    def test_loglik_nondecreasing(self):
        gen = RNG.child(24).generator()
        data = gen.standard_normal((60, 2))
        fit = fit_gmm_em(data, 3, rng=RNG.child(25))
        diffs = np.diff(fit.loglik_trace)
        assert np.all(diffs >= -1e-8)

    def test_output_satisfies_invariants(self):
        gen = RNG.child(26).generator()
        data = gen.standard_normal((30, 4))
        fit = fit_gmm_em(data, 3, rng=RNG.child(27))
        p = fit.params
        assert abs(p.pi.sum() - 1.0) < 1e-9
        assert np.all(p.pi >= 0)
        p.validate_pd()

    def test_tiny_minority_sample_does_not_crash(self):
        # 9 rows, 8 components, 24 dims: covariances are singular by
        # construction and must be ridged, not fatal.
        gen = RNG.child(28).generator()
        data = gen.standard_normal((9, 24)) * 0.3
        fit = fit_gmm_em(data, 8, rng=RNG.child(29))
        fit.params.validate_pd()

    def test_insufficient_rows(self):
        with pytest.raises(InsufficientDataError):
            fit_gmm_em(np.zeros((2, 3)), 5, rng=RNG)


def test_json_round_trip():
    params = GmmParams(
        pi=np.array([0.25, 0.75]),
        mu=np.array([[0.1, 0.2], [-1.0, 2.0]]),
        sigma=np.array([np.eye(2), 2 * np.eye(2)]),
    )
    again = GmmParams.from_json(params.to_json())
    np.testing.assert_array_equal(params.pi, again.pi)
    np.testing.assert_array_equal(params.mu, again.mu)
    np.testing.assert_array_equal(params.sigma, again.sigma)


def test_em_deterministic():
    gen = RNG.child(40).generator()
    data = gen.standard_normal((50, 2))
    a = fit_gmm_em(data, 2, rng=RNG.child(41))
    b = fit_gmm_em(data, 2, rng=RNG.child(41))
    np.testing.assert_array_equal(a.params.mu, b.params.mu)
    np.testing.assert_array_equal(a.params.sigma, b.params.sigma)
