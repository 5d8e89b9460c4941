"""Likelihood-problem contract and finite-difference derivatives.

Everything is written in the minimisation frame: the objective is ``-L`` and
the individual scores are ``U_i = -dL_i/dtheta``.  Log-likelihood values
themselves are always reported on the usual maximisation scale.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EvaluationError

__all__ = [
    "LikelihoodProblem",
    "ScoreBundle",
    "StepRule",
    "SCORE_STEP",
    "HESSIAN_STEP",
    "total_loglik",
    "score_bundle",
    "analytic_score_bundle",
    "hessian",
    "hessian_with_gradient",
]

_EPS = np.finfo(float).eps


class LikelihoodProblem:
    """A log-likelihood made of ``n_obs`` independent contributions.

    Subclasses override :meth:`loglik_i` and, when a faster vectorised path
    exists, :meth:`loglik_units`.  A plain callable can also be wrapped::

        problem = LikelihoodProblem(dim=1, n_obs=3, loglik_i=lambda i, th: ...)

    Problems with closed-form derivatives may override :meth:`unit_scores`
    and :meth:`analytic_hessian`; the default implementations return None.

    Every call of :meth:`evaluate` counts as one evaluation of the total
    likelihood and increments :attr:`evaluation_count`.
    """

    def __init__(self, dim=None, n_obs=None, loglik_i=None):
        if dim is not None:
            self.dim = int(dim)
        if n_obs is not None:
            self.n_obs = int(n_obs)
        if loglik_i is not None:
            self._loglik_i = loglik_i
        if getattr(self, "dim", 0) < 1 or getattr(self, "n_obs", 0) < 1:
            raise ConfigurationError("dim and n_obs must be positive integers")
        self.evaluation_count = 0

    def loglik_i(self, i, theta):
        """Log-likelihood of unit ``i`` at ``theta``."""
        fn = getattr(self, "_loglik_i", None)
        if fn is None:
            raise NotImplementedError
        return fn(i, theta)

    def loglik_units(self, theta):
        """Vector of the ``n_obs`` unit log-likelihoods at ``theta``."""
        out = np.empty(self.n_obs)
        for i in range(self.n_obs):
            try:
                out[i] = self.loglik_i(i, theta)
            except EvaluationError as exc:
                if exc.unit is None:
                    exc.unit = i
                raise
        return out

    def unit_scores(self, theta):
        """Analytic ``n_obs x dim`` score matrix, or None if unavailable."""
        return None

    def analytic_hessian(self, theta):
        """Analytic ``-d2L/dtheta2``, or None if unavailable."""
        return None

    def evaluate(self, theta):
        """Checked unit log-likelihoods; counts one total-likelihood evaluation."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ConfigurationError(
                f"theta has shape {theta.shape}, expected ({self.dim},)")
        self.evaluation_count += 1
        try:
            values = np.asarray(self.loglik_units(theta), dtype=float)
        except EvaluationError as exc:
            if exc.theta is None:
                exc.theta = theta.copy()
            raise
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            raise EvaluationError(str(exc), theta=theta.copy()) from exc
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise EvaluationError(
                f"non-finite log-likelihood for unit {bad[0]}",
                unit=int(bad[0]), theta=theta.copy())
        return values


@dataclass(frozen=True)
class StepRule:
    """Per-coordinate increments ``h_j = max(|theta_j|, floor) * rel``."""

    rel: float = _EPS ** (1.0 / 3.0)
    floor: float = 1.0

    def steps(self, theta):
        theta = np.asarray(theta, dtype=float)
        h = np.maximum(np.abs(theta), self.floor) * self.rel
        # make theta + h exactly representable so the divisor matches the move
        h = (theta + h) - theta
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise ConfigurationError("degenerate finite-difference step")
        return h


SCORE_STEP = StepRule()
HESSIAN_STEP = StepRule(rel=_EPS ** 0.25)


@dataclass(frozen=True)
class ScoreBundle:
    """Individual scores and their total at one parameter value.

    ``scores[i]`` is ``U_i = -dL_i/dtheta`` and ``total_score`` their sum.
    ``loglik`` is the total log-likelihood (maximisation scale) and
    ``n_evals`` the number of total-likelihood evaluations spent.
    """

    theta: np.ndarray
    scores: np.ndarray
    total_score: np.ndarray
    loglik: float
    n_evals: int = 0

    @property
    def n(self):
        return self.scores.shape[0]

    @property
    def dim(self):
        return self.scores.shape[1]


def total_loglik(problem, theta):
    """Sum of the unit log-likelihoods at ``theta``."""
    return float(np.sum(problem.evaluate(theta)))


def _shifted(theta, j, delta):
    out = theta.copy()
    out[j] += delta
    return out


def _centered_pair(problem, theta, j, h):
    """Unit log-likelihoods at theta +/- h e_j, halving h once on failure."""
    try:
        return problem.evaluate(_shifted(theta, j, h)), problem.evaluate(_shifted(theta, j, -h)), h
    except EvaluationError:
        h2 = (theta[j] + h / 2) - theta[j]
        return problem.evaluate(_shifted(theta, j, h2)), problem.evaluate(_shifted(theta, j, -h2)), h2


def score_bundle(problem, theta, step=SCORE_STEP):
    """Centered-difference individual scores.

    Costs exactly ``2 * dim`` evaluations of every unit plus one at ``theta``
    for the reported log-likelihood (more only if a perturbed point fails and
    is retried with a halved increment).
    """
    theta = np.asarray(theta, dtype=float).copy()
    start = problem.evaluation_count
    h = step.steps(theta)
    scores = np.empty((problem.n_obs, problem.dim))
    for j in range(problem.dim):
        up, down, hj = _centered_pair(problem, theta, j, h[j])
        scores[:, j] = -(up - down) / (2.0 * hj)
    loglik = float(np.sum(problem.evaluate(theta)))
    return ScoreBundle(theta, scores, scores.sum(axis=0), loglik,
                       problem.evaluation_count - start)


def analytic_score_bundle(problem, theta):
    """Score bundle from the problem's closed-form unit scores."""
    theta = np.asarray(theta, dtype=float).copy()
    scores = problem.unit_scores(theta)
    if scores is None:
        raise ConfigurationError(f"{type(problem).__name__} has no analytic scores")
    scores = np.asarray(scores, dtype=float).reshape(problem.n_obs, problem.dim)
    start = problem.evaluation_count
    loglik = float(np.sum(problem.evaluate(theta)))
    return ScoreBundle(theta, scores, scores.sum(axis=0), loglik,
                       problem.evaluation_count - start)


def hessian_with_gradient(problem, theta, step=HESSIAN_STEP):
    """Finite-difference ``H = -d2L/dtheta2`` together with ``U`` and ``L``.

    One total-likelihood evaluation per second derivative, on top of the
    ``2m`` centered evaluations that also give the gradient and the one at
    ``theta``: ``m(m+5)/2 + 1`` evaluations in all.

    Returns
    -------
    H : ndarray, shape (m, m)
    U : ndarray, shape (m,)
        Total score ``-dL/dtheta``.
    loglik : float
    """
    theta = np.asarray(theta, dtype=float).copy()
    m = problem.dim
    h = step.steps(theta)
    f0 = float(np.sum(problem.evaluate(theta)))
    fp = np.empty(m)
    grad = np.empty(m)
    for j in range(m):
        up, down, hj = _centered_pair(problem, theta, j, h[j])
        h[j] = hj
        fp[j] = up.sum()
        grad[j] = -(up.sum() - down.sum()) / (2.0 * hj)
    H = np.empty((m, m))
    for j in range(m):
        for k in range(j, m):
            point = _shifted(theta, j, h[j])
            point[k] += h[k]
            fjk = float(np.sum(problem.evaluate(point)))
            H[j, k] = H[k, j] = -(fjk - fp[j] - fp[k] + f0) / (h[j] * h[k])
    return 0.5 * (H + H.T), grad, f0


def hessian(problem, theta, step=HESSIAN_STEP):
    """Finite-difference Hessian of ``-L`` at ``theta`` (symmetric)."""
    return hessian_with_gradient(problem, theta, step)[0]
