"""Newton-like likelihood maximisers: robust-variance scoring and Marquardt.

Both iterate ``theta_{k+1} = theta_k - alpha_k M_k^{-1} U(theta_k)`` for a
positive-definite metric ``M_k`` and stop when

    C_k = U' M_k^{-1} U / m

falls below the stopping value.  For robust-variance scoring (RVS) ``M_k``
is the centred outer product of individual scores; for Marquardt it is the
Hessian plus an adaptively tuned ridge.
"""
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EvaluationError, GSingularError, StepError
from .likelihood import (
    HESSIAN_STEP,
    SCORE_STEP,
    StepRule,
    analytic_score_bundle,
    hessian_with_gradient,
    score_bundle,
)
from .scoring import ScoringMatrix, build_g, build_g_penalized, factorize

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "IterationRecord",
    "FitResult",
    "criterion_ck",
    "rvs_start",
    "rvs_step",
    "marquardt_start",
    "marquardt_step",
    "fit",
    "rvs_iteration_cap",
]

ALGORITHMS = ("rvs", "marquardt")
LINE_SEARCH_MODES = ("on_failure_only", "always")


def rvs_iteration_cap(m):
    """Default RVS iteration cap, ``ceil(30 (m + 5) / 4)``."""
    return math.ceil(30 * (m + 5) / 4)


@dataclass(frozen=True)
class OptimizerConfig:
    """Tuning constants shared by both algorithms.

    ``max_iter=None`` selects 30 for Marquardt and ``ceil(30 (m+5)/4)`` for
    RVS.  ``derivatives="analytic"`` uses the problem's closed-form scores
    (and Hessian, for Marquardt) instead of finite differences.
    """

    stopping_value: float = 1e-4
    max_iter: int = None
    eta_initial: float = 1.0
    lambda_initial: float = 1e-3
    lambda_factor: float = 10.0
    lambda_max: float = 1e10
    line_search: str = "on_failure_only"
    max_halvings: int = 20
    derivatives: str = "numeric"
    score_step: StepRule = SCORE_STEP
    hessian_step: StepRule = HESSIAN_STEP

    def __post_init__(self):
        if not self.stopping_value > 0:
            raise ConfigurationError("stopping_value must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if not 0.0 <= self.eta_initial <= 1.0:
            raise ConfigurationError("eta_initial must lie in [0, 1]")
        if not (self.lambda_initial > 0 and self.lambda_factor > 1):
            raise ConfigurationError("lambda_initial must be > 0 and lambda_factor > 1")
        if self.line_search not in LINE_SEARCH_MODES:
            raise ConfigurationError(f"line_search must be one of {LINE_SEARCH_MODES}")
        if self.derivatives not in ("numeric", "analytic"):
            raise ConfigurationError("derivatives must be 'numeric' or 'analytic'")

    def iteration_cap(self, algorithm, m):
        if self.max_iter is not None:
            return self.max_iter
        return 30 if algorithm == "marquardt" else rvs_iteration_cap(m)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    theta: np.ndarray
    loglik: float
    criterion: float
    alpha: float
    eta: float
    lam: float
    derivative_evaluations: int
    search_evaluations: int


@dataclass(frozen=True)
class OptimizerState:
    """Everything an iteration needs at ``theta``.

    ``objective`` is ``-L + J`` (``J = 0`` without a penalty) and ``score``
    its gradient.  ``metric`` is the positive-definite matrix used for the
    step and the criterion; ``hessian`` is only set for Marquardt.
    """

    theta: np.ndarray
    loglik: float
    objective: float
    score: np.ndarray
    metric: ScoringMatrix
    criterion: float
    iteration: int = 0
    eta: float = float("nan")
    lam: float = float("nan")
    hessian: np.ndarray = None
    derivative_evaluations: int = 0
    search_evaluations: int = 0
    alpha: float = float("nan")


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit`.

    ``g_final`` is the RVS scoring matrix at ``theta_hat`` (None for
    Marquardt, which reports ``hessian`` instead).
    """

    algorithm: str
    theta_hat: np.ndarray
    loglik: float
    criterion: float
    g_final: ScoringMatrix
    hessian: np.ndarray
    converged: bool
    iterations: int
    likelihood_evaluations: int
    wall_time: float
    trace: tuple
    n_obs: int
    stopping_value: float
    message: str = ""

    @property
    def dim(self):
        return self.theta_hat.size

    @property
    def metric_matrix(self):
        return self.g_final.g if self.g_final is not None else self.hessian


def criterion_ck(score, gm):
    """``U' G^{-1} U / m``; ``score`` is a ScoreBundle or the total score."""
    U = np.asarray(getattr(score, "total_score", score), dtype=float)
    return max(float(U @ gm.solve(U)) / U.size, 0.0)


def _penalty_terms(penalty, theta):
    if penalty is None:
        return 0.0, 0.0
    return float(penalty.value(theta)), penalty.grad(theta)


def _objective(problem, theta, penalty):
    """Total log-likelihood and penalised objective; one evaluation."""
    loglik = float(np.sum(problem.evaluate(theta)))
    value = -loglik
    if penalty is not None:
        value += float(penalty.value(theta))
    return loglik, value


def rvs_start(problem, theta, config, penalty=None, iteration=0):
    """Scores, scoring matrix and criterion at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if config.derivatives == "analytic":
        bundle = analytic_score_bundle(problem, theta)
    else:
        bundle = score_bundle(problem, theta, config.score_step)
    if penalty is None:
        gm = build_g(bundle, config.eta_initial)
    else:
        gm = build_g_penalized(bundle, config.eta_initial, penalty, theta)
    pen, pen_grad = _penalty_terms(penalty, theta)
    U = bundle.total_score + pen_grad
    return OptimizerState(
        theta=bundle.theta, loglik=bundle.loglik, objective=-bundle.loglik + pen,
        score=U, metric=gm, criterion=criterion_ck(U, gm), iteration=iteration,
        eta=gm.eta, derivative_evaluations=bundle.n_evals)


def _line_search(problem, state, direction, config, penalty):
    """Backtrack ``alpha = 1, 1/2, ...`` until the objective improves."""
    slope = float(state.score @ direction)
    trials = []
    alpha = 1.0
    for _ in range(config.max_halvings + 1):
        trial = state.theta - alpha * direction
        try:
            _, value = _objective(problem, trial, penalty)
        except EvaluationError:
            value = np.inf
        trials.append((alpha, value))
        if config.line_search == "always":
            ok = value <= state.objective - 1e-4 * alpha * slope
        else:
            ok = value < state.objective
        if ok:
            return trial, alpha, trials
        alpha *= 0.5
    raise StepError("line search found no improving step", trials=trials)


def rvs_step(problem, state, config, penalty=None):
    """One robust-variance scoring iteration from ``state``."""
    before = problem.evaluation_count
    direction = state.metric.solve(state.score)
    theta, alpha, _ = _line_search(problem, state, direction, config, penalty)
    searched = problem.evaluation_count - before
    new = rvs_start(problem, theta, config, penalty, iteration=state.iteration + 1)
    return replace(new, alpha=alpha, search_evaluations=searched)


def _marquardt_derivatives(problem, theta, config, penalty):
    if config.derivatives == "analytic":
        bundle = analytic_score_bundle(problem, theta)
        H = problem.analytic_hessian(theta)
        if H is None:
            raise ConfigurationError("problem has no analytic Hessian")
        H, U, loglik = np.asarray(H, dtype=float), bundle.total_score, bundle.loglik
        n_evals = bundle.n_evals
    else:
        before = problem.evaluation_count
        H, U, loglik = hessian_with_gradient(problem, theta, config.hessian_step)
        n_evals = problem.evaluation_count - before
    pen, pen_grad = _penalty_terms(penalty, theta)
    if penalty is not None:
        H = H + penalty.curvature(theta)
    return H, U + pen_grad, loglik, -loglik + pen, n_evals


def _inflate(H, lam, config):
    """Factor ``H + lam I``, raising ``lam`` until it is positive definite."""
    eye = np.eye(H.shape[0])
    while True:
        try:
            return factorize(H + lam * eye, ridge=lam), lam
        except GSingularError:
            lam *= config.lambda_factor
            if lam > config.lambda_max:
                raise StepError(f"lambda exceeded {config.lambda_max:g}") from None


def marquardt_start(problem, theta, config, penalty=None, iteration=0, lam=None):
    """Hessian, score, inflated metric and criterion at ``theta``."""
    theta = np.asarray(theta, dtype=float).copy()
    lam = config.lambda_initial if lam is None else lam
    H, U, loglik, objective, n_evals = _marquardt_derivatives(problem, theta, config, penalty)
    metric, lam = _inflate(H, lam, config)
    return OptimizerState(
        theta=theta, loglik=loglik, objective=objective, score=U, metric=metric,
        criterion=criterion_ck(U, metric), iteration=iteration, lam=lam, hessian=H,
        derivative_evaluations=n_evals)


def marquardt_step(problem, state, config, penalty=None):
    """One Marquardt iteration; ``lam`` shrinks on success and grows on failure."""
    before = problem.evaluation_count
    lam = state.lam
    metric = state.metric
    trials = []
    while True:
        trial = state.theta - metric.solve(state.score)
        try:
            _, value = _objective(problem, trial, penalty)
        except EvaluationError:
            value = np.inf
        trials.append((lam, value))
        if value < state.objective:
            break
        lam *= config.lambda_factor
        if lam > config.lambda_max:
            raise StepError(f"lambda exceeded {config.lambda_max:g}", trials=trials)
        metric, lam = _inflate(state.hessian, lam, config)
    searched = problem.evaluation_count - before
    new = marquardt_start(problem, trial, config, penalty, iteration=state.iteration + 1,
                          lam=lam / config.lambda_factor)
    return replace(new, alpha=1.0, search_evaluations=searched)


def _record(state):
    return IterationRecord(
        iteration=state.iteration, theta=state.theta.copy(), loglik=state.loglik,
        criterion=state.criterion, alpha=state.alpha, eta=state.eta, lam=state.lam,
        derivative_evaluations=state.derivative_evaluations,
        search_evaluations=state.search_evaluations)


def fit(problem, theta0, algorithm="rvs", config=None, penalty=None):
    """Maximise the (penalised) likelihood of ``problem`` from ``theta0``.

    Step failures do not raise: the result is returned with
    ``converged=False`` and a message.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
    config = config or OptimizerConfig()
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (problem.dim,):
        raise ConfigurationError(f"theta0 must have length {problem.dim}")
    start, step = (rvs_start, rvs_step) if algorithm == "rvs" else (marquardt_start, marquardt_step)
    cap = config.iteration_cap(algorithm, problem.dim)
    evals0 = problem.evaluation_count
    t0 = time.perf_counter()
    message = ""
    try:
        state = start(problem, theta0, config, penalty)
    except (EvaluationError, GSingularError, StepError) as exc:
        return FitResult(
            algorithm=algorithm, theta_hat=theta0.copy(), loglik=float("nan"),
            criterion=float("inf"), g_final=None, hessian=None, converged=False,
            iterations=0, likelihood_evaluations=problem.evaluation_count - evals0,
            wall_time=time.perf_counter() - t0, trace=(), n_obs=problem.n_obs,
            stopping_value=config.stopping_value,
            message=f"evaluation at the starting point failed: {exc}")
    trace = [_record(state)]
    converged = state.criterion <= config.stopping_value
    while not converged and state.iteration < cap:
        try:
            state = step(problem, state, config, penalty)
        except (StepError, EvaluationError, GSingularError) as exc:
            message = f"{type(exc).__name__}: {exc}"
            break
        trace.append(_record(state))
        converged = state.criterion <= config.stopping_value
    wall = time.perf_counter() - t0
    if not converged and not message:
        message = f"iteration cap {cap} reached"
    return FitResult(
        algorithm=algorithm, theta_hat=state.theta.copy(), loglik=state.loglik,
        criterion=state.criterion,
        g_final=state.metric if algorithm == "rvs" else None,
        hessian=state.hessian, converged=converged, iterations=state.iteration,
        likelihood_evaluations=problem.evaluation_count - evals0, wall_time=wall,
        trace=tuple(trace), n_obs=problem.n_obs, stopping_value=config.stopping_value,
        message=message)
