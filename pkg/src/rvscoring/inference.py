"""Variance estimation and confidence regions after a fit.

Only the scores are needed for the model-based variance ``G^{-1}`` and
for the score-test ellipsoid; the sandwich ``H^{-1} G H^{-1}`` costs one
Hessian evaluation at the estimate.
"""
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import BoundaryError, ConfigurationError, GSingularError
from .likelihood import HESSIAN_STEP, SCORE_STEP, hessian, score_bundle
from .scoring import build_g, factorize

__all__ = [
    "InferenceReport",
    "chi2_quantile",
    "model_variance",
    "sandwich",
    "sandwich_variance",
    "delta_method",
    "wald_intervals",
    "score_statistic",
    "score_ellipsoid_contains",
    "confidence_region_contains",
    "conservative_region",
    "conservative_region_contains",
    "score_interval_1d",
]


@dataclass(frozen=True)
class InferenceReport:
    """Point estimate with model-based (and optionally robust) variances.

    ``inflation_factor`` scales ``variance_model`` for early-stopped fits
    (1 when fully converged); interval half-widths grow by its square root.
    ``region_radius`` bounds ``(theta - estimate)' G (theta - estimate)`` for
    the conservative confidence region around ``estimate``.
    """

    estimate: np.ndarray
    variance_model: np.ndarray
    wald_intervals: np.ndarray
    inflation_factor: float = 1.0
    variance_sandwich: np.ndarray = None
    alpha: float = 0.05
    region_radius: float = None
    metric: np.ndarray = None

    @property
    def interval_inflation(self):
        return float(np.sqrt(self.inflation_factor))


def chi2_quantile(alpha, m):
    """Upper-``alpha`` critical value of the chi-squared distribution with ``m`` df."""
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    return float(stats.chi2.ppf(1.0 - alpha, m))


def _sym_inverse(M):
    inv = factorize(M).inverse()
    return 0.5 * (inv + inv.T)


def model_variance(fit, bias_correct=False, allow_unconverged=False):
    """``G^{-1}`` at the estimate (``H^{-1}`` for a Marquardt fit).

    With ``bias_correct`` the metric is first multiplied by ``n / (n - m)``.
    """
    if not (fit.converged or allow_unconverged):
        raise ConfigurationError("fit did not converge; pass allow_unconverged=True")
    M = fit.metric_matrix
    if M is None:
        raise ConfigurationError("fit carries no metric matrix")
    V = _sym_inverse(M)
    if bias_correct:
        n, m = fit.n_obs, fit.dim
        if n <= m:
            raise ConfigurationError("bias correction needs n_obs > dim")
        V = V * (n - m) / n
    return V


def sandwich(H, G):
    """``H^{-1} G H^{-1}``, symmetrised; ``H`` must be positive definite."""
    try:
        Hf = factorize(H)
    except GSingularError as exc:
        raise BoundaryError(
            "Hessian is not positive definite at the estimate "
            f"(smallest eigenvalue {exc.min_eigenvalue:.3g}); boundary or saddle point") from exc
    A = Hf.solve(np.asarray(G, dtype=float))
    S = Hf.solve(A.T)
    return 0.5 * (S + S.T)


def sandwich_variance(problem, fit, step=HESSIAN_STEP, allow_unconverged=False):
    """Robust variance from one finite-difference Hessian at ``fit.theta_hat``."""
    if not (fit.converged or allow_unconverged):
        raise ConfigurationError("fit did not converge; pass allow_unconverged=True")
    H = hessian(problem, fit.theta_hat, step)
    if fit.g_final is not None:
        G = fit.g_final.g
    else:
        G = build_g(score_bundle(problem, fit.theta_hat)).g
    return sandwich(H, G)


def delta_method(variance, jacobian):
    """``J V J'`` for a transformation with Jacobian ``J``."""
    J = np.asarray(jacobian, dtype=float)
    return J @ np.asarray(variance, dtype=float) @ J.T


def wald_intervals(estimate, variance, alpha=0.05, inflation=1.0):
    """Per-parameter ``estimate -/+ z sqrt(inflation * diag(variance))``."""
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(inflation * np.diag(variance))
    est = np.asarray(estimate, dtype=float)
    return np.column_stack([est - half, est + half])


def score_statistic(problem, theta, step=SCORE_STEP, eta=1.0):
    """``U' G^{-1} U`` with scores and scoring matrix evaluated at ``theta``."""
    bundle = score_bundle(problem, theta, step)
    gm = build_g(bundle, eta)
    U = bundle.total_score
    return float(U @ gm.solve(U))


def score_ellipsoid_contains(problem, theta, alpha=0.05, step=SCORE_STEP):
    """Whether the score test of ``theta_* = theta`` does not reject at level ``alpha``."""
    return score_statistic(problem, theta, step) <= chi2_quantile(alpha, problem.dim)


def _quad(theta, center, metric):
    d = np.asarray(theta, dtype=float) - np.asarray(center, dtype=float)
    return float(d @ np.asarray(metric) @ d)


def confidence_region_contains(theta, theta_hat, metric, alpha=0.05):
    """``(theta - theta_hat)' G (theta - theta_hat) <= c_alpha``."""
    m = np.asarray(theta_hat).size
    return _quad(theta, theta_hat, metric) <= chi2_quantile(alpha, m)


def conservative_region(fit_early, alpha=0.05):
    """Conservative inference around an iterate stopped before full convergence.

    The unknown distance between the stopped iterate and the MLE is
    estimated by ``m * C_k``.  The variance ``G^{-1}`` is inflated by
    ``(c_alpha + d) / c_alpha`` for the Wald intervals.  The region itself
    uses radius ``(sqrt(c_alpha) + sqrt(d))**2``, which contains the
    ``c_alpha`` ellipsoid around the MLE by the triangle inequality for the
    G-norm.
    """
    m = fit_early.dim
    c_alpha = chi2_quantile(alpha, m)
    d = m * float(fit_early.criterion)
    factor = (c_alpha + d) / c_alpha
    M = fit_early.metric_matrix
    V = _sym_inverse(M)
    return InferenceReport(
        estimate=fit_early.theta_hat.copy(),
        variance_model=V,
        wald_intervals=wald_intervals(fit_early.theta_hat, V, alpha, factor),
        inflation_factor=factor,
        alpha=alpha,
        region_radius=(np.sqrt(c_alpha) + np.sqrt(d)) ** 2,
        metric=np.asarray(M).copy(),
    )


def conservative_region_contains(report, theta):
    """Membership predicate for the region described by :func:`conservative_region`."""
    return _quad(theta, report.estimate, report.metric) <= report.region_radius


def score_interval_1d(problem, theta_hat, alpha=0.05, step=SCORE_STEP, max_expand=60):
    """Endpoints where the scalar score statistic reaches ``c_alpha``, by bisection.

    Only for one-parameter problems.  The search brackets outwards from
    ``theta_hat`` in steps of the model-based standard error.
    """
    if problem.dim != 1:
        raise ConfigurationError("score_interval_1d needs a one-parameter problem")
    center = float(np.ravel(theta_hat)[0])
    c_alpha = chi2_quantile(alpha, 1)
    g0 = build_g(score_bundle(problem, np.array([center]), step)).g[0, 0]
    se = 1.0 / np.sqrt(g0)

    def excess(x):
        return score_statistic(problem, np.array([x]), step) - c_alpha

    ends = []
    for sign in (-1.0, 1.0):
        inner, outer = center, center + sign * se
        for _ in range(max_expand):
            if excess(outer) > 0:
                break
            inner, outer = outer, center + 2 * (outer - center)
        else:
            raise ConfigurationError("could not bracket the interval endpoint")
        ends.append(optimize.brentq(excess, min(inner, outer), max(inner, outer), xtol=1e-12))
    return ends[0], ends[1]
