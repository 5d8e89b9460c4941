from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize, stats

from rvscoring.errors import ConfigurationError, EvaluationError
from rvscoring.likelihood import hessian, score_bundle, total_loglik
from rvscoring.models.analytic import GaussianMean, GaussianMeanVariance, analytic_test_models
from rvscoring.models.longitudinal import (
    AR_TRUE,
    RE_TRUE,
    ArParams,
    CensoredMixedModel,
    ReParams,
    Subject,
    generate_dataset,
    get_model,
    imputed_start,
    subject_loglik,
)


class _FixedCov:
    """Model stub with a given covariance, for hand-built subjects."""

    def __init__(self, V):
        self.V = np.asarray(V, dtype=float)

    def covariance(self, params, times, cache=None):
        return self.V.copy()


_ZERO_MEAN = SimpleNamespace(beta=(0.0, 0.0, 0.0, 0.0))


def _subject(y, censored):
    y = np.asarray(y, dtype=float)
    return Subject(np.arange(y.size, dtype=float), 0.0, y, np.asarray(censored, bool))


def _dense_logpdf(subject, model, params):
    mu = subject.design() @ np.array(params.beta)
    return stats.multivariate_normal(mu, model.covariance(params, subject.times)).logpdf(subject.y)


def test_uncensored_threshold_minus_infinity():
    data = generate_dataset("re", RE_TRUE, 40, -np.inf, seed=0)
    assert data.censored_fraction == 0.0


@pytest.mark.parametrize("name", ["ar", "re"])
def test_generated_design(name):
    model = get_model(name)
    data = generate_dataset(model, model.true_params, 200, 2.0, seed=3)
    n = [s.n_measures for s in data.subjects]
    assert min(n) >= 5 and max(n) <= 11 and len(set(n)) == 7
    xs = np.array([s.x for s in data.subjects])
    assert set(xs) == {0.0, 1.0}
    assert_allclose(xs.mean(), 0.5, atol=0.1)
    for s in data.subjects:
        assert np.all((s.times >= 0) & (s.times <= 6))
        assert np.all(s.y[s.censored] == 2.0)
        assert np.all(s.y[~s.censored] >= 2.0)


def test_generation_reproducible():
    a = generate_dataset("ar", AR_TRUE, 30, 1.0, seed=9)
    b = generate_dataset("ar", AR_TRUE, 30, 1.0, seed=9)
    c = generate_dataset("ar", AR_TRUE, 30, 1.0, seed=10)
    assert a.equals(b) and not a.equals(c)


def test_generation_validates():
    with pytest.raises(ConfigurationError):
        generate_dataset("ar", RE_TRUE, 5, 1.0, seed=0)
    with pytest.raises(ConfigurationError):
        generate_dataset("re", RE_TRUE, 0, 1.0, seed=0)
    with pytest.raises(ConfigurationError):
        get_model("spline")


def test_parameter_invariants():
    with pytest.raises(ConfigurationError):
        ArParams((0, 0, 0, 0), sigma2_w=-1.0, delta=0.1, sigma2_e=1.0)
    with pytest.raises(ConfigurationError):
        ReParams((0, 0, 0, 0), sigma2_0=0.1, sigma2_1=0.1, sigma_01=0.2, sigma2_e=1.0)
    with pytest.raises(ConfigurationError):
        ReParams((0, 0, 0), sigma2_0=0.1, sigma2_1=0.1, sigma_01=0.0, sigma2_e=1.0)


def test_scalar_observed_is_normal_density():
    s = _subject([0.7], [False])
    got = subject_loglik(_FixedCov([[2.0]]), _ZERO_MEAN, s, threshold=-5.0)
    assert_allclose(got, stats.norm.logpdf(0.7, 0.0, np.sqrt(2.0)), rtol=1e-14)


def test_scalar_censored_at_mean_is_half():
    s = _subject([0.0], [True])
    assert_allclose(subject_loglik(_FixedCov([[3.0]]), _ZERO_MEAN, s, threshold=0.0), np.log(0.5),
                    rtol=1e-14)


def test_bivariate_orthant():
    s = _subject([0.0, 0.0], [True, True])
    V = [[1.0, 0.5], [0.5, 1.0]]
    expected = np.log(0.25 + np.arcsin(0.5) / (2 * np.pi))
    assert_allclose(expected, np.log(1 / 3), rtol=1e-14)
    assert_allclose(subject_loglik(_FixedCov(V), _ZERO_MEAN, s, threshold=0.0), expected, rtol=1e-12)


def test_all_censored_is_orthant_probability():
    V = np.array([[1.0, 0.4, 0.2], [0.4, 1.5, 0.3], [0.2, 0.3, 1.2]])
    s = _subject([0.5, 0.5, 0.5], [True, True, True])
    p = stats.multivariate_normal(np.zeros(3), V).cdf(np.full(3, 0.5))
    assert_allclose(subject_loglik(_FixedCov(V), _ZERO_MEAN, s, threshold=0.5), np.log(p), atol=1e-3)


@pytest.mark.parametrize("name", ["ar", "re"])
def test_uncensored_matches_dense_density(name):
    model = get_model(name)
    data = generate_dataset(model, model.true_params, 10, -np.inf, seed=5)
    for s in data.subjects:
        assert_allclose(subject_loglik(model, model.true_params, s, -np.inf),
                        _dense_logpdf(s, model, model.true_params), rtol=1e-10)


def test_jump_across_threshold_is_density_versus_mass():
    V = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
    thr = 0.2
    y = np.array([0.9, thr, 1.4])
    obs = subject_loglik(_FixedCov(V), _ZERO_MEAN, _subject(y, [False, False, False]), thr)
    cens = subject_loglik(_FixedCov(V), _ZERO_MEAN, _subject(y, [False, True, False]), thr)
    # conditional law of the middle response given the other two
    o = [0, 2]
    w = np.linalg.solve(V[np.ix_(o, o)], V[o, 1])
    m, v = w @ y[o], V[1, 1] - V[1, o] @ w
    assert np.isfinite(obs) and np.isfinite(cens)
    assert_allclose(obs - cens, stats.norm.logpdf(thr, m, np.sqrt(v)) - stats.norm.logcdf(thr, m, np.sqrt(v)),
                    rtol=1e-10)


@pytest.mark.parametrize("name", ["ar", "re"])
def test_working_round_trip(name):
    model = get_model(name)
    th = model.to_working(model.true_params)
    assert_allclose(model.from_working(th).to_vector(), model.true_params.to_vector(), rtol=1e-14)


@pytest.mark.parametrize("name", ["ar", "re"])
def test_jacobian_matches_differences(name):
    model = get_model(name)
    th = model.to_working(model.true_params) + np.random.default_rng(0).normal(scale=0.2, size=model.dim)
    h = 1e-6
    num = np.column_stack([
        (model.from_working(th + h * e).to_vector() - model.from_working(th - h * e).to_vector()) / (2 * h)
        for e in np.eye(model.dim)])
    assert_allclose(model.jacobian(th), num, rtol=1e-7, atol=1e-9)


def test_re_feasible_set_is_positive_definite_v():
    model = get_model("re")
    data = generate_dataset(model, RE_TRUE, 10, 2.0, seed=6)
    prob = CensoredMixedModel(data, model)
    th = model.to_working(RE_TRUE)
    # indefinite random-effect block, V still positive definite
    slightly = th.copy()
    slightly[4:7] = (0.02, 0.0, -0.002)
    assert np.all(np.isfinite(prob.evaluate(slightly)))
    far = th.copy()
    far[4:7] = (-3.0, 0.0, 0.1)
    with pytest.raises(EvaluationError):
        prob.evaluate(far)
    tiny_e = th.copy()
    tiny_e[7] = -800.0
    with pytest.raises(EvaluationError):
        model.from_working(tiny_e)


@pytest.mark.parametrize("name", ["ar", "re"])
def test_censored_problem_units_and_start(name):
    model = get_model(name)
    data = generate_dataset(model, model.true_params, 25, 2.0, seed=2)
    prob = CensoredMixedModel(data, model)
    th = model.to_working(model.true_params)
    units = prob.evaluate(th)
    expected = [subject_loglik(model, model.true_params, s, 2.0) for s in data.subjects]
    assert_allclose(units, expected, rtol=1e-12)
    start = imputed_start(data, model)
    assert start.shape == (model.dim,)
    assert np.isfinite(total_loglik(prob, start))


def test_imputed_model_ignores_flags():
    model = get_model("ar")
    data = generate_dataset(model, AR_TRUE, 10, 2.0, seed=4)
    prob = CensoredMixedModel(data, model, censoring=False)
    th = model.to_working(AR_TRUE)
    dense = sum(_dense_logpdf(s, model, AR_TRUE) for s in data.imputed().subjects)
    assert_allclose(total_loglik(prob, th), dense, rtol=1e-12)


def test_analytic_gaussian_mean_mle():
    assert_allclose(GaussianMean(np.array([1.0, 2.0, 3.0])).mle(), [2.0])


def test_analytic_mean_variance_information():
    y = np.random.default_rng(1).normal(0.0, 2.0, 50)
    prob = GaussianMeanVariance(y)
    th = np.array([0.3, 4.0])
    assert_allclose(prob.information(th), np.diag([50 / 4.0, 50 / (2 * 16.0)]), rtol=1e-14)


def test_analytic_logistic_mle_against_golden_section():
    prob = analytic_test_models(200, 0)["logistic"]
    res = optimize.minimize_scalar(lambda b: -np.sum(prob.loglik_units(np.array([b]))),
                                   bracket=(-1.0, 0.0, 3.0), method="golden", tol=1e-10)
    assert_allclose(prob.mle()[0], res.x, atol=1e-6)


def test_analytic_derivatives_match_numeric(oracle_models):
    for prob in oracle_models.values():
        th = prob.mle() * 1.1 + 0.05
        assert_allclose(score_bundle(prob, th).scores, prob.unit_scores(th), rtol=1e-6, atol=1e-8)
        # forward second differences: first-order error in the eps**0.25 step
        assert_allclose(hessian(prob, th), prob.analytic_hessian(th), rtol=2e-3)
