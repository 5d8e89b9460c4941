"""The robust-variance scoring matrix G and its linear algebra."""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConfigurationError, GSingularError

__all__ = [
    "ScoringMatrix",
    "Penalty",
    "quadratic_penalty",
    "second_difference_penalty",
    "build_g",
    "build_g_penalized",
    "factorize",
    "g_solve",
    "ETA_LADDER",
    "RIDGE_LADDER",
]

ETA_LADDER = (0.9, 0.5, 0.0)
RIDGE_LADDER = (1e-8, 1e-6, 1e-4, 1e-2)
PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class ScoringMatrix:
    """A positive-definite metric with its cached Cholesky factor.

    ``eta`` is the centering weight actually used and ``ridge`` the absolute
    diagonal inflation (0 when none was needed).
    """

    g: np.ndarray
    eta: float
    ridge: float
    cholesky: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.g.shape[0]

    def solve(self, v):
        return g_solve(self, v)

    def inverse(self):
        return g_solve(self, np.eye(self.dim))


@dataclass(frozen=True)
class Penalty:
    """Roughness penalty ``J(theta, kappa)`` subtracted from the log-likelihood.

    ``hessian`` returns ``d2J/dtheta2``.  ``gradient`` is optional; when it is
    missing and the penalty is quadratic about the origin it is taken as
    ``hessian(theta) @ theta``.
    """

    value: object
    hessian: object
    kappa: np.ndarray
    gradient: object = None
    quadratic: bool = False

    def grad(self, theta):
        if self.gradient is not None:
            return np.asarray(self.gradient(theta), dtype=float)
        if self.quadratic:
            return self.hessian(theta) @ theta
        raise ConfigurationError("penalty gradient required for non-quadratic J")

    def curvature(self, theta):
        h = np.asarray(self.hessian(theta), dtype=float)
        if self.quadratic:
            if not np.allclose(h, h.T):
                raise ConfigurationError("penalty Hessian is not symmetric")
            if np.linalg.eigvalsh(0.5 * (h + h.T)).min() < -1e-10 * max(1.0, np.abs(h).max()):
                raise ConfigurationError("quadratic penalty is not positive semidefinite")
        return h


def quadratic_penalty(D, kappa):
    """``J = kappa/2 * theta' D theta`` for a symmetric PSD ``D``."""
    D = np.asarray(D, dtype=float)
    kappa = float(kappa)
    return Penalty(
        value=lambda th: 0.5 * kappa * th @ D @ th,
        hessian=lambda th: kappa * D,
        gradient=lambda th: kappa * D @ th,
        kappa=np.array([kappa]),
        quadratic=True,
    )


def second_difference_penalty(k, kappa):
    """Discrete roughness penalty ``kappa/2 * sum((theta[j+1] - 2theta[j] + theta[j-1])**2)``."""
    D2 = np.diff(np.eye(k), n=2, axis=0)
    return quadratic_penalty(D2.T @ D2, kappa)


def _try_cholesky(g):
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        return None
    scale = np.max(np.diag(g))
    if not np.isfinite(L).all() or scale <= 0 or np.min(np.diag(L)) ** 2 < PIVOT_TOL * scale:
        return None
    return L


def factorize(g, eta=float("nan"), ridge=0.0):
    """Wrap an already-formed symmetric matrix; raises if it is not PD."""
    g = 0.5 * (np.asarray(g, dtype=float) + np.asarray(g, dtype=float).T)
    L = _try_cholesky(g)
    if L is None:
        raise GSingularError("matrix is not positive definite",
                             min_eigenvalue=_min_eig(g))
    return ScoringMatrix(g, eta, ridge, L)


def _min_eig(g):
    try:
        return float(np.linalg.eigvalsh(g).min())
    except np.linalg.LinAlgError:
        return float("nan")


def _outer_parts(bundle):
    U_i = np.asarray(bundle.scores, dtype=float)
    if U_i.shape[0] < 1:
        raise ConfigurationError("score bundle has no rows")
    U = U_i.sum(axis=0)
    return U_i.T @ U_i, np.outer(U, U) / U_i.shape[0]


def _ladder(outer, centering, extra, eta):
    """Apply the eta-then-ridge safeguard until a Cholesky factor exists."""
    etas = [eta] + [e for e in ETA_LADDER if e < eta]
    for e in etas:
        g = outer - e * centering + extra
        g = 0.5 * (g + g.T)
        L = _try_cholesky(g)
        if L is not None:
            return ScoringMatrix(g, e, 0.0, L)
    base = 0.5 * (outer + extra + (outer + extra).T)
    scale = np.mean(np.diag(base))
    for lam in RIDGE_LADDER:
        ridge = lam * scale
        g = base + ridge * np.eye(base.shape[0])
        L = _try_cholesky(g)
        if L is not None:
            return ScoringMatrix(g, 0.0, ridge, L)
    raise GSingularError("scoring matrix singular after safeguard ladder",
                         min_eigenvalue=_min_eig(base))


def build_g(bundle, eta=1.0):
    """``sum U_i U_i' - eta/n U U'`` with the positive-definiteness safeguard.

    If the Cholesky factorisation fails, smaller centering weights from
    ``ETA_LADDER`` are tried, then a ridge ``lambda * mean(diag)`` for
    ``lambda`` in ``RIDGE_LADDER`` (with ``eta = 0``).
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError("eta must lie in [0, 1]")
    outer, centering = _outer_parts(bundle)
    return _ladder(outer, centering, 0.0, eta)


def build_g_penalized(bundle, eta, penalty, theta):
    """Scoring matrix for the penalised objective ``-L + J``.

    The penalty curvature ``d2J/dtheta2`` is added, so that near the
    maximum G approximates the Hessian of minus the penalised likelihood.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError("eta must lie in [0, 1]")
    outer, centering = _outer_parts(bundle)
    curv = penalty.curvature(np.asarray(theta, dtype=float))
    return _ladder(outer, centering, curv, eta)


def g_solve(gm, v):
    """``G^{-1} v`` by two triangular solves against the cached factor."""
    return cho_solve((gm.cholesky, True), np.asarray(v, dtype=float))
