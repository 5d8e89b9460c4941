import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats
from scipy.special import ndtr

from rvscoring.errors import ConfigurationError, IntegrationError
from rvscoring.models.mvn import FixedRule, bvn_cdf, mvn_cdf


def _equicorrelated(d, rho):
    return (1 - rho) * np.eye(d) + rho * np.ones((d, d))


def _one_factor_oracle(b, rho):
    # Z_j = sqrt(rho) F + sqrt(1 - rho) E_j with F, E_j independent
    b = np.asarray(b, dtype=float)
    f = lambda z: stats.norm.pdf(z) * np.prod(ndtr((b - np.sqrt(rho) * z) / np.sqrt(1 - rho)))
    val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    return val


def _bvn_oracle(h, k, rho):
    f = lambda x: stats.norm.pdf(x) * ndtr((k - rho * x) / np.sqrt(1 - rho ** 2))
    val, _ = integrate.quad(f, -np.inf, h, epsabs=1e-14, epsrel=1e-13)
    return val


@pytest.mark.parametrize("u", [-3.0, -0.4, 0.0, 1.7, 6.0])
def test_dimension_one(u):
    assert_allclose(mvn_cdf([u], [0.5], [[4.0]]), ndtr((u - 0.5) / 2.0), rtol=1e-12, atol=1e-15)


def test_dimension_two_independent():
    assert_allclose(mvn_cdf([0.0, 0.0], cov=np.eye(2)), 0.25, atol=1e-15)


def test_dimension_two_orthant():
    assert_allclose(mvn_cdf([0.0, 0.0], cov=_equicorrelated(2, 0.5)), 1 / 3, atol=1e-14)


@pytest.mark.parametrize("h, k, rho", [(0.3, -0.8, 0.6), (-1.2, -0.5, -0.7), (2.0, 0.1, 0.95),
                                       (0.0, 0.7, -0.2), (-2.5, 1.5, 0.0)])
def test_bvn_against_quadrature(h, k, rho):
    assert_allclose(bvn_cdf(h, k, rho), _bvn_oracle(h, k, rho), atol=1e-12)


def test_dimension_three_equicorrelated():
    S = _equicorrelated(3, 0.5)
    assert_allclose(mvn_cdf(np.zeros(3), cov=S), 0.25, atol=1e-6)
    assert_allclose(mvn_cdf(np.zeros(3), cov=S), _one_factor_oracle(np.zeros(3), 0.5), atol=1e-6)


@pytest.mark.parametrize("b, rho", [([0.5, -0.3, 1.0], 0.3), ([-1.0, -1.0, 0.2], 0.8),
                                    ([2.0, -0.5, 0.0], 0.1)])
def test_dimension_three_one_factor(b, rho):
    assert_allclose(mvn_cdf(b, cov=_equicorrelated(3, rho)), _one_factor_oracle(b, rho), atol=1e-6)


def test_infinite_limit_marginalises():
    S = np.array([[1.0, 0.3, 0.2], [0.3, 2.0, -0.4], [0.2, -0.4, 1.5]])
    full = mvn_cdf([0.4, np.inf, -0.2], cov=S)
    sub = mvn_cdf([0.4, -0.2], cov=S[np.ix_([0, 2], [0, 2])])
    assert_allclose(full, sub, atol=1e-6)


def test_mean_shift():
    S = _equicorrelated(4, 0.4)
    mu = np.array([0.1, -0.2, 0.3, 0.0])
    u = np.array([0.5, 0.5, 1.0, -0.2])
    assert_allclose(mvn_cdf(u, mu, S), mvn_cdf(u - mu, None, S), atol=1e-12)


def test_monotone_in_upper_limits():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = int(rng.integers(3, 6))
        X = rng.normal(size=(d, d))
        S = X @ X.T + 0.5 * np.eye(d)
        u = rng.normal(size=d)
        j = int(rng.integers(d))
        v = u.copy()
        v[j] += 0.5
        assert mvn_cdf(v, cov=S, tol=1e-5) >= mvn_cdf(u, cov=S, tol=1e-5)


def test_deterministic():
    S = _equicorrelated(5, 0.3)
    u = np.array([0.2, -0.1, 0.4, 0.9, -0.5])
    assert mvn_cdf(u, cov=S) == mvn_cdf(u, cov=S)
    rule = FixedRule(256)
    L = np.linalg.cholesky(S)
    assert rule(u, L) == rule(u, L)


def test_tolerance_unmet_raises():
    S = _equicorrelated(6, 0.6)
    with pytest.raises(IntegrationError) as info:
        mvn_cdf(np.zeros(6), cov=S, tol=1e-14, max_points=2 ** 12)
    assert info.value.error_estimate > 1e-14


def test_error_estimate_respects_tolerance():
    S = _equicorrelated(5, 0.5)
    p, err = mvn_cdf(np.full(5, 0.3), cov=S, tol=1e-6, return_error=True)
    assert err <= 1e-6


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        mvn_cdf([0.0, 0.0], cov=np.eye(3))
    with pytest.raises(ConfigurationError):
        mvn_cdf([0.0, 0.0, 0.0], cov=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        FixedRule(1000)


def test_fixed_rule_close_to_adaptive():
    rng = np.random.default_rng(1)
    rule = FixedRule()
    for d in (3, 5, 8):
        X = rng.normal(size=(d, d))
        S = X @ X.T + d * np.eye(d)
        b = rng.normal(size=d) + 1.0
        p = rule(b, np.linalg.cholesky(S))
        assert_allclose(p, mvn_cdf(b, cov=S, reorder=False), rtol=5e-3)


def test_fixed_rule_batches():
    rule = FixedRule(512)
    S = [_equicorrelated(3, r) for r in (0.1, 0.5, 0.7)]
    b = np.array([[0.0, 0.5, 1.0], [-0.3, 0.2, 0.2], [1.0, 1.0, -1.0]])
    L = np.stack([np.linalg.cholesky(s) for s in S])
    batch = rule(b, L)
    single = [rule(bi, Li) for bi, Li in zip(b, L)]
    assert_allclose(batch, single, rtol=1e-14)
