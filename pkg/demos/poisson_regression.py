"""Fit a Poisson regression with both optimizers and compare the inference.

Only the per-observation log-likelihood is supplied; scores, the scoring
matrix and (for Marquardt) the Hessian all come from finite differences.

Run with ``python demos/poisson_regression.py``.
"""
import numpy as np
from scipy.special import gammaln

from rvscoring import (
    LikelihoodProblem,
    OptimizerConfig,
    conservative_region,
    fit,
    model_variance,
    sandwich_variance,
    wald_intervals,
)


class PoissonRegression(LikelihoodProblem):
    """log E[y] = X beta, one unit per row."""

    def __init__(self, X, y):
        self.X, self.y = np.asarray(X, float), np.asarray(y, float)
        super().__init__(dim=self.X.shape[1], n_obs=self.y.size)

    def loglik_units(self, theta):
        eta = self.X @ theta
        return self.y * eta - np.exp(eta) - gammaln(self.y + 1)


def main():
    rng = np.random.default_rng(7)
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.binomial(1, 0.4, n)])
    beta = np.array([0.5, 0.3, -0.4])
    prob = PoissonRegression(X, rng.poisson(np.exp(X @ beta)))
    start = np.zeros(3)

    print("fits from beta = 0")
    fits = {}
    for alg in ("rvs", "marquardt"):
        prob.evaluation_count = 0
        fits[alg] = res = fit(prob, start, alg)
        print(f"  {alg:9s} iterations {res.iterations:2d}  likelihood evaluations "
              f"{prob.evaluation_count:3d}  loglik {res.loglik:.6f}  C_k {res.criterion:.1e}")
    gap = np.abs(fits["rvs"].theta_hat - fits["marquardt"].theta_hat).max()
    print(f"  largest difference between the estimates {gap:.1e}")

    # G^-1 needs no second derivatives; H^-1 G H^-1 guards against misspecification
    res = fits["rvs"]
    V_model = model_variance(res)
    V_sand = sandwich_variance(prob, res)
    print("\nstandard errors (model, sandwich)")
    for name, a, b in zip(("intercept", "x", "group"), np.sqrt(np.diag(V_model)),
                          np.sqrt(np.diag(V_sand))):
        print(f"  {name:9s} {a:.4f}  {b:.4f}")
    print("\n95% Wald intervals")
    for name, (lo, hi), true in zip(("intercept", "x", "group"),
                                    wald_intervals(res.theta_hat, V_model), beta):
        print(f"  {name:9s} [{lo:+.3f}, {hi:+.3f}]  true {true:+.2f}")

    # a loose stopping value gives a conservative, slightly wider answer
    early = fit(prob, start, "rvs", OptimizerConfig(stopping_value=0.5))
    report = conservative_region(early)
    print(f"\nstopped early at C_k = {early.criterion:.3f} after {early.iterations} iterations")
    print(f"  variance inflation {report.inflation_factor:.3f}, "
          f"interval inflation {report.interval_inflation:.3f}")


if __name__ == "__main__":
    main()
