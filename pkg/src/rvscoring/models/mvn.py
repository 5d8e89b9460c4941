"""Multivariate normal distribution function by separation of variables.

The integrand is the Genz transform of ``P(Z <= b)``: after a Cholesky
factorisation the d-dimensional orthant probability becomes a product of
univariate normal probabilities over the unit cube of dimension ``d - 1``.
That cube is integrated with Owen-scrambled Sobol points.  Scramblings
come from fixed seeds, so every result is deterministic.

Dimensions one and two are handled in closed form (the latter through
Owen's T function).

Two entry points:

* :func:`mvn_cdf` - adaptive, with an error estimate from the spread over
  independent scramblings; raises :class:`IntegrationError` if ``tol`` is not met.
* :class:`FixedRule` - a fixed point set applied to batches of problems of the
  same dimension.  A fixed rule is a smooth function of the limits and the
  Cholesky factor, which is what finite-difference derivatives need.
"""
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri, owens_t
from scipy.stats import qmc

from ..errors import ConfigurationError, IntegrationError

__all__ = ["mvn_cdf", "bvn_cdf", "FixedRule", "sobol_points"]

_SEED = 20070403
_TINY = np.finfo(float).tiny
_ONE = 1.0 - np.finfo(float).eps / 2
N_SCRAMBLES = 8


@lru_cache(maxsize=256)
def sobol_points(n, dim, scramble=0):
    """First ``n`` points (a power of two) of scrambling number ``scramble``.

    The returned array is cached and read-only.
    """
    if n < 1 or n & (n - 1):
        raise ConfigurationError("n must be a power of two")
    seed = np.random.SeedSequence(_SEED, spawn_key=(dim, scramble))
    pts = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seed)).random_base2(int(np.log2(n)))
    pts.flags.writeable = False
    return pts


def bvn_cdf(h, k, rho):
    """Standard bivariate normal ``P(Z1 <= h, Z2 <= k)`` with correlation ``rho``.

    Vectorised over broadcastable arguments; exact up to Owen's T accuracy.
    """
    h, k, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, rho)))
    s = np.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
    # h == 0 (or k == 0): the Owen's T argument is +/- infinity
    ah = np.where(h == 0, np.where(k - rho * h >= 0, np.inf, -np.inf), ah)
    ak = np.where(k == 0, np.where(h - rho * k >= 0, np.inf, -np.inf), ak)
    hk = h * k
    adj = np.where((hk < 0) | ((hk == 0) & (h + k < 0)), 0.5, 0.0)
    p = 0.5 * (ndtr(h) + ndtr(k)) - owens_t(h, ah) - owens_t(k, ak) - adj
    both0 = (h == 0) & (k == 0)
    if np.any(both0):
        p = np.where(both0, 0.25 + np.arcsin(rho) / (2 * np.pi), p)
    # infinite limits reduce to univariate probabilities
    p = np.where(np.isposinf(h), ndtr(k), p)
    p = np.where(np.isposinf(k), ndtr(h), p)
    p = np.where(np.isneginf(h) | np.isneginf(k), 0.0, p)
    p = np.clip(p, 0.0, 1.0)
    return p[()] if p.ndim == 0 else p


def _bvn_from_cholesky(b, L):
    sd2 = np.hypot(L[:, 1, 0], L[:, 1, 1])
    return bvn_cdf(b[:, 0] / L[:, 0, 0], b[:, 1] / sd2, L[:, 1, 0] / sd2)


def _sov_batch(b, L, w):
    """Genz integrand averaged over points.

    Parameters
    ----------
    b : (k, d) standardised upper limits (mean already subtracted)
    L : (k, d, d) lower Cholesky factors
    w : (N, d - 1) points in the unit cube
    """
    k, d = b.shape
    e = ndtr(b[:, 0] / L[:, 0, 0])
    if d == 1:
        return e
    npts = w.shape[0]
    prod = np.repeat(e[:, None], npts, axis=1)
    e_prev = prod.copy()
    ys = []
    for i in range(1, d):
        ys.append(ndtri(np.clip(w[None, :, i - 1] * e_prev, _TINY, _ONE)))
        s = np.zeros((k, npts))
        for l in range(i):
            s += L[:, i, l, None] * ys[l]
        e_prev = ndtr((b[:, i, None] - s) / L[:, i, i, None])
        prod *= e_prev
    return prod.mean(axis=1)


def _prioritized_cholesky(b, S):
    """Reorder variables (smallest expected probability first) while factorising."""
    d = len(b)
    S = S.copy()
    b = b.copy()
    C = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best, best_p = i, np.inf
        for j in range(i, d):
            den = np.sqrt(max(S[j, j] - C[j, :i] @ C[j, :i], _TINY))
            p = ndtr((b[j] - C[j, :i] @ y[:i]) / den)
            if p < best_p:
                best, best_p = j, p
        if best != i:
            S[[i, best]] = S[[best, i]]
            S[:, [i, best]] = S[:, [best, i]]
            b[[i, best]] = b[[best, i]]
            C[[i, best], :i] = C[[best, i], :i]
        piv = S[i, i] - C[i, :i] @ C[i, :i]
        if piv <= 0:
            raise np.linalg.LinAlgError("covariance is not positive definite")
        C[i, i] = np.sqrt(piv)
        for l in range(i + 1, d):
            C[l, i] = (S[l, i] - C[l, :i] @ C[i, :i]) / C[i, i]
        bt = (b[i] - C[i, :i] @ y[:i]) / C[i, i]
        phi = np.exp(-0.5 * bt * bt) / np.sqrt(2 * np.pi)
        cdf = ndtr(bt)
        y[i] = -phi / cdf if cdf > 0 else bt
    return b, C


def mvn_cdf(upper, mean=None, cov=None, tol=1e-6, max_points=2 ** 18,
            reorder=True, return_error=False):
    """``P(Z <= upper)`` componentwise for ``Z ~ N(mean, cov)``.

    Parameters
    ----------
    upper : array_like, shape (d,)
        Upper limits; ``+inf`` entries are allowed.
    mean : array_like, optional
        Defaults to zero.
    cov : array_like, shape (d, d)
        Symmetric positive definite covariance.
    tol : float
        Absolute error target (3.5 standard errors over the scramblings).
    max_points : int
        Total budget of integrand evaluations.
    reorder : bool
        Apply variable prioritisation before integrating.
    return_error : bool
        Also return the error estimate.

    Raises
    ------
    IntegrationError
        If ``tol`` is unmet within ``max_points``.
    """
    b = np.atleast_1d(np.asarray(upper, dtype=float))
    d = b.size
    mean = np.zeros(d) if mean is None else np.atleast_1d(np.asarray(mean, dtype=float))
    S = np.atleast_2d(np.asarray(cov, dtype=float))
    if S.shape != (d, d) or mean.shape != (d,):
        raise ConfigurationError("inconsistent shapes for upper, mean and cov")
    b = b - mean
    try:
        if reorder and d > 1:
            b, L = _prioritized_cholesky(b, S)
        else:
            L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("cov must be symmetric positive definite") from exc

    if d <= 2:
        p = float(ndtr(b[0] / L[0, 0]) if d == 1 else _bvn_from_cholesky(b[None], L[None])[0])
        return (p, 0.0) if return_error else p

    n = 256
    while True:
        vals = np.array([
            _sov_batch(b[None], L[None], sobol_points(n, d - 1, r))[0]
            for r in range(N_SCRAMBLES)])
        est = float(vals.mean())
        err = 3.5 * float(vals.std(ddof=1)) / np.sqrt(N_SCRAMBLES)
        if err <= tol:
            break
        if 2 * n * N_SCRAMBLES > max_points:
            raise IntegrationError(
                f"mvn_cdf tolerance {tol:g} unmet, error estimate {err:.3g}",
                error_estimate=err)
        n *= 2
    est = min(max(est, 0.0), 1.0)
    return (est, err) if return_error else est


class FixedRule:
    """Fixed point set for batches of same-dimension orthant probabilities.

    Parameters
    ----------
    n_points : int
        Points per problem, a power of two (one fixed scrambling).
    """

    def __init__(self, n_points=1024):
        if n_points < 1 or n_points & (n_points - 1):
            raise ConfigurationError("n_points must be a positive power of two")
        self.n_points = int(n_points)

    def points(self, dim):
        return sobol_points(self.n_points, dim)

    def __call__(self, b, L):
        """Probabilities ``P(L Z <= b)`` for stacked ``b`` (k, d) and ``L`` (k, d, d)."""
        b = np.asarray(b, dtype=float)
        L = np.asarray(L, dtype=float)
        if b.ndim == 1:
            return self(b[None], L[None])[0]
        d = b.shape[1]
        if d == 1:
            return ndtr(b[:, 0] / L[:, 0, 0])
        if d == 2:
            return _bvn_from_cholesky(b, L)
        return _sov_batch(b, L, self.points(d - 1))

