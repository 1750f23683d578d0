import numpy as np
import pytest
from scipy import special

from cplx_sparse_vd.core.dist import (
    EULER_GAMMA,
    CGaussScalar,
    dawson,
    digamma,
    ei,
    ei_derivative,
    ein,
    entropy_cn,
    log_moment_cn,
    sample_cn,
)
from cplx_sparse_vd.core.errors import DegenerateDistributionError, DomainError


class TestSpecialFunctions:
    def test_ei_against_scipy(self):
        x = -np.logspace(-8, 2.5, 200)
        np.testing.assert_allclose(ei(x), special.expi(x), rtol=1e-8)

    def test_ein_against_scipy(self):
        z = np.logspace(-1, 2.5, 200)
        expected = special.exp1(z) + np.log(z) + EULER_GAMMA
        np.testing.assert_allclose(ein(z), expected, rtol=1e-9)

    def test_ein_small_argument(self):
        z = np.array([1e-8, 1e-5])
        np.testing.assert_allclose(ein(z), z - z * z / 4.0, rtol=1e-9)

    def test_ein_at_zero(self):
        assert ein(np.array([0.0]))[0] == 0.0

    def test_ei_derivative_matches_differences(self):
        x = np.array([-3.0, -0.7, -0.01])
        h = 1e-6
        numeric = (ei(x + h) - ei(x - h)) / (2 * h)
        np.testing.assert_allclose(ei_derivative(x), numeric, rtol=1e-6)

    def test_ei_domain(self):
        with pytest.raises(DomainError):
            ei(np.array([-1.0, 0.0]))

    def test_dawson_against_scipy(self):
        x = np.linspace(0.0, 40.0, 801)
        np.testing.assert_allclose(dawson(x), special.dawsn(x), rtol=1e-10, atol=1e-15)

    def test_digamma_against_scipy(self):
        x = np.logspace(-3, 3, 100)
        np.testing.assert_allclose(digamma(x), special.digamma(x), rtol=1e-10)

    def test_digamma_domain(self):
        with pytest.raises(DomainError):
            digamma(np.array([0.0]))


class TestComplexGaussian:
    def test_entropy_circular(self):
        d = CGaussScalar(mu=1 + 1j, sigma2=2.0)
        assert entropy_cn(d) == pytest.approx(np.log(np.pi * np.e * 2.0))

    def test_entropy_with_relation(self):
        d = CGaussScalar(sigma2=1.0, xi=0.6j)
        assert entropy_cn(d) == pytest.approx(np.log(np.pi * np.e) + 0.5 * np.log(1 - 0.36))

    def test_entropy_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            entropy_cn(CGaussScalar(sigma2=0.0))
        with pytest.raises(DegenerateDistributionError):
            entropy_cn(CGaussScalar(sigma2=1.0, xi=1.0))

    def test_relation_bound_validated(self):
        with pytest.raises(ValueError):
            CGaussScalar(sigma2=1.0, xi=1.5)

    def test_sampling_moments(self, rng):
        d = CGaussScalar(mu=0.5 - 1j, sigma2=3.0)
        z = sample_cn(d, 200_000, rng)
        se = np.sqrt(3.0 / z.size)
        assert abs(z.mean() - d.mu) < 4 * se
        assert np.mean(np.abs(z - d.mu) ** 2) == pytest.approx(3.0, rel=0.02)
        # relação nula
        assert abs(np.mean((z - d.mu) ** 2)) < 0.05

    def test_zero_variance_sampling(self, rng):
        z = sample_cn(CGaussScalar(mu=2j, sigma2=0.0), 5, rng)
        np.testing.assert_array_equal(z, np.full(5, 2j))

    def test_log_moment_at_zero(self):
        assert float(log_moment_cn(0.0)) == pytest.approx(-EULER_GAMMA)

    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.5 - 1j])
    def test_log_moment_against_monte_carlo(self, rng, theta):
        n = 400_000
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        samples = np.log(np.abs(theta + z) ** 2)
        se = samples.std() / np.sqrt(n)
        assert abs(samples.mean() - float(log_moment_cn(theta))) < 4 * se
