"""Small likelihood problems with closed-form scores, Hessians and MLEs.

They serve as oracles for the optimizers and the inference routines.
"""
import numpy as np
from scipy.special import expit, log1p

from ..errors import ConfigurationError, EvaluationError
from ..likelihood import LikelihoodProblem

__all__ = [
    "GaussianMean",
    "GaussianMeanVariance",
    "Logistic1D",
    "QuadraticProblem",
    "AffineReparameterization",
    "analytic_test_models",
]

_LOG2PI = np.log(2 * np.pi)


class GaussianMean(LikelihoodProblem):
    """i.i.d. ``N(mu, sigma2)`` with known variance; ``theta = (mu,)``."""

    def __init__(self, y, sigma2=1.0):
        self.y = np.asarray(y, dtype=float)
        self.sigma2 = float(sigma2)
        super().__init__(dim=1, n_obs=self.y.size)

    def loglik_i(self, i, theta):
        return self.loglik_units(theta)[i]

    def loglik_units(self, theta):
        r = self.y - theta[0]
        return -0.5 * (_LOG2PI + np.log(self.sigma2)) - 0.5 * r * r / self.sigma2

    def unit_scores(self, theta):
        return (-(self.y - theta[0]) / self.sigma2)[:, None]

    def analytic_hessian(self, theta):
        return np.array([[self.n_obs / self.sigma2]])

    def mle(self):
        return np.array([self.y.mean()])

    def information(self, theta):
        return self.analytic_hessian(theta)


class GaussianMeanVariance(LikelihoodProblem):
    """i.i.d. ``N(mu, sigma2)``; ``theta = (mu, sigma2)``, feasible for sigma2 > 0."""

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        super().__init__(dim=2, n_obs=self.y.size)

    def loglik_i(self, i, theta):
        return self.loglik_units(theta)[i]

    def loglik_units(self, theta):
        mu, s2 = theta
        if not s2 > 0:
            raise EvaluationError("sigma2 must be positive", theta=np.asarray(theta))
        r = self.y - mu
        return -0.5 * (_LOG2PI + np.log(s2)) - 0.5 * r * r / s2

    def unit_scores(self, theta):
        mu, s2 = theta
        r = self.y - mu
        return np.column_stack([-r / s2, 0.5 / s2 - 0.5 * r * r / s2 ** 2])

    def analytic_hessian(self, theta):
        mu, s2 = theta
        r = self.y - mu
        n = self.n_obs
        return np.array([[n / s2, r.sum() / s2 ** 2],
                         [r.sum() / s2 ** 2, -0.5 * n / s2 ** 2 + (r * r).sum() / s2 ** 3]])

    def mle(self):
        return np.array([self.y.mean(), self.y.var()])

    def information(self, theta):
        s2 = theta[1]
        return np.diag([self.n_obs / s2, self.n_obs / (2 * s2 ** 2)])


class Logistic1D(LikelihoodProblem):
    """Logistic regression through the origin, ``P(y=1) = expit(beta x)``."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ConfigurationError("x and y must have the same shape")
        super().__init__(dim=1, n_obs=self.x.size)

    def loglik_i(self, i, theta):
        return self.loglik_units(theta)[i]

    def loglik_units(self, theta):
        eta = theta[0] * self.x
        # log(1 + exp(eta)) without overflow
        return self.y * eta - (np.maximum(eta, 0) + log1p(np.exp(-np.abs(eta))))

    def unit_scores(self, theta):
        p = expit(theta[0] * self.x)
        return (-(self.y - p) * self.x)[:, None]

    def analytic_hessian(self, theta):
        p = expit(theta[0] * self.x)
        return np.array([[np.sum(p * (1 - p) * self.x ** 2)]])

    def mle(self, tol=1e-14, max_iter=100):
        beta = 0.0
        for _ in range(max_iter):
            th = np.array([beta])
            step = self.unit_scores(th).sum() / self.analytic_hessian(th)[0, 0]
            beta -= step
            if abs(step) < tol * max(1.0, abs(beta)):
                break
        return np.array([beta])

    def information(self, theta):
        return self.analytic_hessian(theta)


class QuadraticProblem(LikelihoodProblem):
    """``-L = 1/2 (theta - a)' A (theta - a)`` split over ``2m`` units.

    Unit ``i`` carries ``-L_i = (theta - a)' A (theta - a) / (2n) + c_i'(theta - a)``
    with offsets ``c_i`` that sum to zero and satisfy ``sum c_i c_i' = A``.
    Then the centred outer-product matrix equals ``A`` at every theta, so the
    scoring iteration with ``eta = 1`` is exactly Newton's method.
    """

    def __init__(self, A, a):
        self.A = np.asarray(A, dtype=float)
        self.a = np.asarray(a, dtype=float)
        m = self.a.size
        L = np.linalg.cholesky(self.A)
        cols = L.T / np.sqrt(2.0)
        self.offsets = np.concatenate([cols, -cols])
        super().__init__(dim=m, n_obs=2 * m)

    def loglik_i(self, i, theta):
        return self.loglik_units(theta)[i]

    def loglik_units(self, theta):
        d = np.asarray(theta) - self.a
        return -(0.5 * d @ self.A @ d / self.n_obs + self.offsets @ d)

    def unit_scores(self, theta):
        d = np.asarray(theta) - self.a
        return (self.A @ d / self.n_obs)[None, :] + self.offsets

    def analytic_hessian(self, theta):
        return self.A.copy()

    def mle(self):
        return self.a.copy()

    def information(self, theta):
        return self.A.copy()


class AffineReparameterization(LikelihoodProblem):
    """The problem ``base`` expressed in ``eta = T theta + t``."""

    def __init__(self, base, T, t):
        self.base = base
        self.T = np.asarray(T, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.T_inv = np.linalg.inv(self.T)
        super().__init__(dim=base.dim, n_obs=base.n_obs)

    def to_base(self, eta):
        return self.T_inv @ (np.asarray(eta) - self.t)

    def from_base(self, theta):
        return self.T @ np.asarray(theta) + self.t

    def loglik_i(self, i, eta):
        return self.base.loglik_i(i, self.to_base(eta))

    def loglik_units(self, eta):
        return self.base.loglik_units(self.to_base(eta))

    def unit_scores(self, eta):
        s = self.base.unit_scores(self.to_base(eta))
        return None if s is None else s @ self.T_inv

    def analytic_hessian(self, eta):
        h = self.base.analytic_hessian(self.to_base(eta))
        return None if h is None else self.T_inv.T @ h @ self.T_inv


def analytic_test_models(n=200, seed=0):
    """Seeded instances of the Gaussian-mean, mean-variance and logistic problems."""
    rng = np.random.default_rng(seed)
    y = rng.normal(1.0, 1.0, n)
    x = rng.normal(0.0, 1.0, n)
    yl = (rng.random(n) < expit(0.8 * x)).astype(float)
    return {
        "gaussian_mean": GaussianMean(y),
        "gaussian_mean_variance": GaussianMeanVariance(rng.normal(2.0, 1.5, n)),
        "logistic": Logistic1D(x, yl),
    }
