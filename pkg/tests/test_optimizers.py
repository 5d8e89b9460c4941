import numpy as np
import pytest
from numpy.testing import assert_allclose

from rvscoring.errors import ConfigurationError, EvaluationError
from rvscoring.likelihood import LikelihoodProblem
from rvscoring.models.analytic import (
    AffineReparameterization,
    GaussianMean,
    GaussianMeanVariance,
    Logistic1D,
    QuadraticProblem,
)
from rvscoring.optimizers import (
    OptimizerConfig,
    criterion_ck,
    fit,
    marquardt_start,
    rvs_iteration_cap,
    rvs_start,
    rvs_step,
)
from rvscoring.scoring import factorize

ANALYTIC = OptimizerConfig(derivatives="analytic")
A3 = np.array([[3.0, 0.4, -0.2], [0.4, 2.0, 0.3], [-0.2, 0.3, 1.5]])
a3 = np.array([0.2, -0.1, 0.5])


class _Quartic(LikelihoodProblem):
    """``-L = th0^2/2 - th1^2/2 + th1^4/4``: indefinite Hessian near th1 = 0."""

    def __init__(self):
        super().__init__(dim=2, n_obs=1)

    def loglik_units(self, theta):
        return np.array([-(0.5 * theta[0] ** 2 - 0.5 * theta[1] ** 2 + 0.25 * theta[1] ** 4)])


class _BreaksAfter(LikelihoodProblem):
    """Quadratic that fails every evaluation after the first ``k``."""

    def __init__(self, k):
        self.k = k
        super().__init__(dim=1, n_obs=2)

    def loglik_units(self, theta):
        # evaluate() has already counted this call
        if self.evaluation_count > self.k:
            raise EvaluationError("unavailable")
        return -0.5 * (theta[0] - np.array([1.0, 2.0])) ** 2


@pytest.mark.parametrize("U, G, expected", [
    ([0.0, 0.0], np.eye(2), 0.0),
    ([1.0, 1.0], np.eye(2), 1.0),
    ([2.0], np.array([[4.0]]), 1.0),
])
def test_criterion_examples(U, G, expected):
    assert_allclose(criterion_ck(np.array(U), factorize(G)), expected, atol=1e-15)


def test_rvs_single_step_exact_on_quadratic():
    prob = QuadraticProblem(A3, a3)
    state = rvs_start(prob, np.array([1.0, 1.0, -1.0]), ANALYTIC)
    assert_allclose(state.metric.g, A3, rtol=1e-12)
    new = rvs_step(prob, state, ANALYTIC)
    assert_allclose(new.theta, a3, atol=1e-14)
    assert new.alpha == 1.0
    assert new.criterion < 1e-25


def test_rvs_logistic_step_matches_scalar_reimplementation():
    rng = np.random.default_rng(11)
    x = rng.normal(size=80)
    y = (rng.random(80) < 1 / (1 + np.exp(-1.2 * x))).astype(float)
    prob = Logistic1D(x, y)
    new = rvs_step(prob, rvs_start(prob, np.zeros(1), ANALYTIC), ANALYTIC)

    # scalar re-derivation: at beta = 0 every p is 1/2
    u = [-(yi - 0.5) * xi for xi, yi in zip(x, y)]
    total = sum(u)
    g = sum(ui * ui for ui in u) - total * total / len(u)

    def negll(b):
        return sum(np.log1p(np.exp(b * xi)) - yi * b * xi for xi, yi in zip(x, y))

    alpha = 1.0
    while negll(-alpha * total / g) >= negll(0.0):
        alpha /= 2
    assert_allclose(new.theta[0], -alpha * total / g, rtol=1e-12)


def test_marquardt_quadratic_two_iterations():
    prob = QuadraticProblem(A3, a3)
    res = fit(prob, np.array([5.0, -3.0, 2.0]), "marquardt",
              OptimizerConfig(derivatives="analytic", stopping_value=1e-10))
    assert res.converged and res.iterations <= 2
    assert res.criterion < 1e-10
    assert_allclose(res.theta_hat, a3, atol=1e-5)


def test_marquardt_indefinite_hessian_gives_descent():
    prob = _Quartic()
    theta = np.array([1.0, 0.1])
    state = marquardt_start(prob, theta, OptimizerConfig())
    assert np.linalg.eigvalsh(state.hessian).min() < 0
    assert state.lam > 0.97
    d = state.metric.solve(state.score)
    # directional derivative of -L along the step -d
    assert -state.score @ d < 0
    assert np.linalg.eigvalsh(state.metric.g).min() > 0


def test_gaussian_mean_recovered_from_any_start():
    y = np.random.default_rng(2).normal(3.0, 1.0, 120)
    prob = GaussianMean(y)
    for start in (-50.0, 0.0, 7.5):
        for alg in ("rvs", "marquardt"):
            res = fit(prob, np.array([start]), alg, OptimizerConfig(stopping_value=1e-14))
            assert res.converged
            assert_allclose(res.theta_hat[0], y.mean(), atol=1e-8)


def test_iteration_caps():
    assert rvs_iteration_cap(7) == 90 and rvs_iteration_cap(8) == 98
    cfg = OptimizerConfig()
    assert cfg.iteration_cap("marquardt", 8) == 30
    assert cfg.iteration_cap("rvs", 8) == 98
    assert OptimizerConfig(max_iter=5).iteration_cap("rvs", 8) == 5


@pytest.mark.parametrize("kw", [
    {"stopping_value": 0.0}, {"max_iter": 0}, {"eta_initial": 1.2},
    {"lambda_factor": 1.0}, {"line_search": "sometimes"}, {"derivatives": "symbolic"},
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        OptimizerConfig(**kw)


def test_fit_rejects_bad_arguments():
    prob = GaussianMean(np.zeros(3))
    with pytest.raises(ConfigurationError):
        fit(prob, np.zeros(1), "newton")
    with pytest.raises(ConfigurationError):
        fit(prob, np.zeros(2))


@pytest.mark.parametrize("alg", ["rvs", "marquardt"])
def test_converged_iff_criterion_below_stopping(alg):
    prob = GaussianMeanVariance(np.random.default_rng(3).normal(1, 2, 200))
    for cap in (1, 2, 30):
        res = fit(prob, np.array([-3.0, 10.0]), alg, OptimizerConfig(max_iter=cap))
        assert res.iterations <= cap
        assert res.converged == (res.criterion <= res.stopping_value)
        assert len(res.trace) == res.iterations + 1
        if not res.converged:
            assert "cap" in res.message


@pytest.mark.parametrize("alg", ["rvs", "marquardt"])
def test_step_failure_reported_not_raised(alg):
    m = 1
    start_cost = 2 * m + 1 if alg == "rvs" else m * (m + 5) // 2 + 1
    res = fit(_BreaksAfter(start_cost), np.array([0.0]), alg)
    assert not res.converged
    assert "StepError" in res.message
    assert res.iterations == 0


def test_failed_start_reported():
    res = fit(_BreaksAfter(0), np.array([0.0]))
    assert not res.converged and "starting point" in res.message


@pytest.mark.parametrize("alg", ["rvs", "marquardt"])
def test_accepted_steps_descend(alg, oracle_models):
    for prob in oracle_models.values():
        start = prob.mle() + 0.5 if prob.dim == 1 else prob.mle() * np.array([0.5, 2.0])
        res = fit(prob, start, alg)
        ll = np.array([r.loglik for r in res.trace])
        assert np.all(np.diff(ll) > 0)


def test_criterion_is_scaled_distance_on_quadratic():
    prob = QuadraticProblem(A3, a3)
    rng = np.random.default_rng(4)
    for _ in range(5):
        th = a3 + rng.normal(scale=0.3, size=3)
        state = rvs_start(prob, th, OptimizerConfig(derivatives="numeric"))
        d = th - a3
        assert_allclose(state.criterion, d @ state.metric.g @ d / 3, rtol=1e-8)


def test_fit_deterministic():
    prob = GaussianMeanVariance(np.random.default_rng(5).normal(size=50))
    a = fit(prob, np.array([1.0, 3.0]))
    b = fit(prob, np.array([1.0, 3.0]))
    assert np.array_equal([r.theta for r in a.trace], [r.theta for r in b.trace])


@pytest.mark.parametrize("alg", ["rvs", "marquardt"])
def test_iterates_affinely_equivariant(alg):
    base = GaussianMeanVariance(np.random.default_rng(6).normal(1, 2, 80))
    T = np.array([[1.5, 0.3], [0.2, 0.8]])
    t = np.array([-0.4, 0.9])
    rep = AffineReparameterization(base, T, t)
    start = np.array([3.0, 9.0])
    # Marquardt's ridge is not affine invariant; use an orthogonal map for it
    if alg == "marquardt":
        c, s = np.cos(0.7), np.sin(0.7)
        rep = AffineReparameterization(base, np.array([[c, -s], [s, c]]), t)
    r0 = fit(base, start, alg, ANALYTIC)
    r1 = fit(rep, rep.from_base(start), alg, ANALYTIC)
    assert r0.iterations == r1.iterations
    for a, b in zip(r0.trace, r1.trace):
        assert_allclose(rep.to_base(b.theta), a.theta, rtol=1e-10, atol=1e-12)


def test_eval_ratio_formula():
    for m in (7, 8):
        assert_allclose((2 * m + 1) / (m * (m + 5) / 2 + 1), 4 / (m + 5), rtol=0.06)


def test_eval_ratio_on_ar_fits(desk_reports):
    rep = desk_reports["ar"]
    ratio = rep.evaluations_per_iteration("rvs") / rep.evaluations_per_iteration("marquardt")
    assert_allclose(ratio, 1 / 3, rtol=0.2)


def test_rvs_converges_at_least_as_often_on_re(desk_reports):
    rep = desk_reports["re"]
    assert rep.convergence_count("rvs") >= rep.convergence_count("marquardt")


def _monotone_after_first_step(criteria):
    tail = np.asarray(criteria[1:])
    return bool(np.all(np.diff(tail) <= 0))


def test_monotone_helper():
    assert _monotone_after_first_step([5.0, 9.0, 3.0, 1.0, 1.0])
    assert not _monotone_after_first_step([5.0, 3.0, 1.0, 2.0])


# near the optimum a noisy G gives alternating half steps, so C_k bounces
@pytest.mark.xfail(strict=True, reason="C_k is not monotone on most desk replicates")
def test_rvs_criterion_monotone_on_re(desk_reports):
    fits = [r.fits["rvs"] for r in desk_reports["re"].replicates]
    share = np.mean([_monotone_after_first_step(f.criteria) for f in fits])
    assert share >= 0.95, f"C_k monotone on {100 * share:.0f}% of replicates"


# RVS stops at C_k <= 1e-4, which leaves squared differences near 1e-5 at
# 50 subjects; a stopping value of 1e-6 brings them below 3e-7
@pytest.mark.xfail(strict=True, reason="desk agreement is limited by the stopping value")
def test_marquardt_matches_rvs_on_ar(desk_reports):
    ssd, joint = desk_reports["ar"].joint_ssd()
    assert joint > 0
    assert ssd < 3e-6, f"mean squared difference {ssd:.2e} over {joint} replicates"
