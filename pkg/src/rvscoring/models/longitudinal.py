"""Linear mixed models for left-censored longitudinal data.

Two data-generating models share the fixed-effect part

    Y_ij = b0 + b1 t_ij + b2 X_i + b3 X_i t_ij + (subject error)

and differ in the subject error:

* ``ar`` - a stationary Gaussian process with covariance
  ``sigma2_w * exp(-delta |t - t'|)`` plus white noise ``sigma2_e``;
* ``re`` - a random intercept and slope ``a0 + a1 t`` with covariance
  ``[[sigma2_0, sigma_01], [sigma_01, sigma2_1]]`` plus white noise.

Responses below the detection threshold are recorded as the threshold and
flagged.  A subject's likelihood is the Gaussian density of the observed
responses times the conditional Gaussian probability that the censored
responses lie below the threshold.

Optimisation happens on a working scale: log variances (and log delta) for
AR; for RE the random-effect covariance entries themselves and log sigma2_e,
feasible wherever every subject covariance is positive definite.
"""
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, EvaluationError
from ..likelihood import LikelihoodProblem
from .mvn import FixedRule

__all__ = [
    "Subject",
    "LongitudinalDataset",
    "ArParams",
    "ReParams",
    "AR_TRUE",
    "RE_TRUE",
    "ArModel",
    "ReModel",
    "get_model",
    "generate_dataset",
    "subject_loglik",
    "CensoredMixedModel",
    "imputed_start",
]

_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class Subject:
    times: np.ndarray
    x: float
    y: np.ndarray
    censored: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "censored", np.asarray(self.censored, dtype=bool))
        if not (self.times.shape == self.y.shape == self.censored.shape) or self.y.ndim != 1:
            raise ConfigurationError("times, y and censored must be 1-D of equal length")

    @property
    def n_measures(self):
        return self.y.size

    def design(self):
        t = self.times
        return np.column_stack([np.ones_like(t), t, np.full_like(t, self.x), self.x * t])


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    subjects: tuple
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))

    def __len__(self):
        return len(self.subjects)

    @property
    def n_measures(self):
        return sum(s.n_measures for s in self.subjects)

    @property
    def censored_fraction(self):
        return sum(int(s.censored.sum()) for s in self.subjects) / self.n_measures

    def imputed(self):
        """Same responses with censoring flags dropped (values stay at the threshold)."""
        subjects = [Subject(s.times, s.x, s.y, np.zeros_like(s.censored)) for s in self.subjects]
        return LongitudinalDataset(subjects, self.threshold)

    def equals(self, other):
        if len(self) != len(other) or not _same_float(self.threshold, other.threshold):
            return False
        return all(
            np.array_equal(a.times, b.times) and a.x == b.x and np.array_equal(a.y, b.y)
            and np.array_equal(a.censored, b.censored)
            for a, b in zip(self.subjects, other.subjects))


def _same_float(a, b):
    return a == b or (np.isnan(a) and np.isnan(b))


@dataclass(frozen=True)
class ArParams:
    beta: tuple
    sigma2_w: float
    delta: float
    sigma2_e: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 4:
            raise ConfigurationError("beta must have 4 entries")
        if not (self.sigma2_w > 0 and self.delta > 0 and self.sigma2_e > 0):
            raise ConfigurationError("sigma2_w, delta and sigma2_e must be positive")

    def to_vector(self):
        return np.array([*self.beta, self.sigma2_w, self.delta, self.sigma2_e])


@dataclass(frozen=True)
class ReParams:
    beta: tuple
    sigma2_0: float
    sigma2_1: float
    sigma_01: float
    sigma2_e: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 4:
            raise ConfigurationError("beta must have 4 entries")
        if not (self.sigma2_0 > 0 and self.sigma2_1 > 0
                and self.sigma2_0 * self.sigma2_1 - self.sigma_01 ** 2 > 0):
            raise ConfigurationError("random-effect covariance must be positive definite")
        if not self.sigma2_e > 0:
            raise ConfigurationError("sigma2_e must be positive")

    def to_vector(self):
        """Natural-scale vector in the order b0..b3, sigma2_0, sigma_01, sigma2_1, sigma2_e."""
        return np.array([*self.beta, self.sigma2_0, self.sigma_01, self.sigma2_1, self.sigma2_e])

    @property
    def re_cov(self):
        return np.array([[self.sigma2_0, self.sigma_01], [self.sigma_01, self.sigma2_1]])


AR_TRUE = ArParams(beta=(4.0, -0.5, -0.5, -0.1), sigma2_w=1.0, delta=0.1, sigma2_e=1.0)
RE_TRUE = ReParams(beta=(4.0, -0.5, -0.5, -0.1), sigma2_0=0.25, sigma2_1=0.1,
                   sigma_01=-0.1, sigma2_e=1.0)


class ArModel:
    """Exponential-decay autocorrelated errors (7 parameters)."""

    name = "ar"
    dim = 7
    param_names = ("beta0", "beta1", "beta2", "beta3", "sigma2_w", "delta", "sigma2_e")
    params_type = ArParams
    true_params = AR_TRUE

    def from_vector(self, v):
        v = np.asarray(v, dtype=float)
        return ArParams(tuple(v[:4]), v[4], v[5], v[6])

    def to_working(self, params):
        v = params.to_vector()
        return np.concatenate([v[:4], np.log(v[4:])])

    def from_working(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="raise"):
            try:
                return ArParams(tuple(theta[:4]), *np.exp(theta[4:]))
            except (FloatingPointError, ConfigurationError) as exc:
                raise EvaluationError(f"infeasible working parameters: {exc}") from exc

    def jacobian(self, theta):
        """``d natural / d working`` at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        return np.diag(np.concatenate([np.ones(4), np.exp(theta[4:])]))

    def covariance(self, params, times, cache=None):
        lag = cache if cache is not None else np.abs(times[:, None] - times[None, :])
        V = params.sigma2_w * np.exp(-params.delta * lag)
        V[np.diag_indices_from(V)] += params.sigma2_e
        return V

    def structure(self, times):
        return np.abs(times[:, None] - times[None, :])


class ReModel:
    """Random intercept and slope (8 parameters)."""

    name = "re"
    dim = 8
    param_names = ("beta0", "beta1", "beta2", "beta3", "sigma2_0", "sigma_01",
                   "sigma2_1", "sigma2_e")
    params_type = ReParams
    true_params = RE_TRUE

    def from_vector(self, v):
        v = np.asarray(v, dtype=float)
        return ReParams(tuple(v[:4]), sigma2_0=v[4], sigma_01=v[5], sigma2_1=v[6], sigma2_e=v[7])

    # Working scale: (sigma2_0, sigma_01, sigma2_1) as they are, log sigma2_e.
    # The feasible set is every point where each subject's V is positive
    # definite, so the random-effect block itself may be slightly
    # indefinite.  A PSD boundary would otherwise sit close to many small-sample
    # maxima: log or Cholesky coordinates turn it into a region where the
    # scores vanish, and a hard PSD check makes the difference steps fail.

    def to_working(self, params):
        return np.array([*params.beta, params.sigma2_0, params.sigma_01, params.sigma2_1,
                         np.log(params.sigma2_e)])

    def from_working(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="raise"):
            try:
                s2e = np.exp(theta[7])
            except FloatingPointError as exc:
                raise EvaluationError(f"infeasible working parameters: {exc}") from exc
        if not s2e > 0:
            raise EvaluationError("residual variance underflows to zero")
        if not np.all(np.isfinite(theta)):
            raise EvaluationError("non-finite working parameters")
        # V positive definite is checked where V is factorised
        p = object.__new__(ReParams)
        for name, value in zip(("sigma2_0", "sigma_01", "sigma2_1"), theta[4:7]):
            object.__setattr__(p, name, float(value))
        object.__setattr__(p, "sigma2_e", float(s2e))
        object.__setattr__(p, "beta", tuple(float(v) for v in theta[:4]))
        return p

    def jacobian(self, theta):
        """``d natural / d working`` at ``theta``."""
        J = np.eye(8)
        J[7, 7] = np.exp(float(theta[7]))
        return J

    def covariance(self, params, times, cache=None):
        Z = cache if cache is not None else self.structure(times)
        V = Z @ params.re_cov @ Z.T
        V[np.diag_indices_from(V)] += params.sigma2_e
        return V

    def structure(self, times):
        return np.column_stack([np.ones_like(times), times])


_MODELS = {"ar": ArModel(), "re": ReModel()}


def get_model(name):
    try:
        return _MODELS[str(name).lower()]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; expected 'ar' or 're'") from None


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def generate_dataset(model, params, n_subjects, threshold, seed):
    """Simulate ``n_subjects`` subjects and left-censor at ``threshold``.

    Each subject has 5 to 11 measures (uniform), a Bernoulli(0.5) covariate
    and measurement times drawn independently from U[0, 6].
    """
    model = get_model(model) if isinstance(model, str) else model
    if not isinstance(params, model.params_type):
        raise ConfigurationError(f"{model.name} model needs {model.params_type.__name__}")
    if n_subjects < 1:
        raise ConfigurationError("n_subjects must be at least 1")
    rng = _as_generator(seed)
    beta = np.asarray(params.beta)
    subjects = []
    for _ in range(int(n_subjects)):
        n_i = int(rng.integers(5, 12))
        x = float(rng.binomial(1, 0.5))
        t = np.sort(rng.uniform(0.0, 6.0, n_i))
        proto = Subject(t, x, np.zeros(n_i), np.zeros(n_i, bool))
        V = model.covariance(params, t)
        y = proto.design() @ beta + np.linalg.cholesky(V) @ rng.standard_normal(n_i)
        cens = y < threshold
        y = np.where(cens, threshold, y)
        subjects.append(Subject(t, x, y, cens))
    return LongitudinalDataset(subjects, float(threshold))


def _subject_terms(y, mu, V, cens, threshold):
    """Observed log-density and the conditional orthant problem of one subject.

    Returns ``(log_density, b, L)`` where ``b`` and ``L`` are the standardised
    limits and Cholesky factor of the censored block given the observed one
    (``None`` when nothing is censored).
    """
    obs = ~cens
    n_obs = int(obs.sum())
    if n_obs:
        Voo = V[np.ix_(obs, obs)]
        Loo = np.linalg.cholesky(Voo)
        r = np.linalg.solve(Loo, y[obs] - mu[obs])
        logdens = -0.5 * (n_obs * _LOG2PI + r @ r) - np.log(np.diag(Loo)).sum()
    else:
        logdens = 0.0
    if n_obs == y.size:
        return logdens, None, None
    Vcc = V[np.ix_(cens, cens)]
    mean_c = mu[cens]
    if n_obs:
        A = np.linalg.solve(Loo, V[np.ix_(obs, cens)])
        mean_c = mean_c + A.T @ r
        Vcc = Vcc - A.T @ A
    Lc = np.linalg.cholesky(0.5 * (Vcc + Vcc.T))
    return logdens, threshold - mean_c, Lc


def subject_loglik(model, params, subject, threshold, rule=None):
    """Log-likelihood contribution of one subject on the natural scale."""
    model = get_model(model) if isinstance(model, str) else model
    rule = rule or FixedRule()
    mu = subject.design() @ np.asarray(params.beta)
    V = model.covariance(params, subject.times)
    try:
        logdens, b, L = _subject_terms(subject.y, mu, V, subject.censored, threshold)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("subject covariance is not positive definite") from exc
    if b is None:
        return float(logdens)
    p = float(rule(b, L))
    if not p > 0:
        raise EvaluationError("censored probability underflowed to zero")
    return float(logdens + np.log(p))


class CensoredMixedModel(LikelihoodProblem):
    """Likelihood problem for a longitudinal dataset on the working scale.

    Parameters
    ----------
    dataset : LongitudinalDataset
    model : str or model object
    rule : FixedRule, optional
        Integration rule for censored blocks of dimension three or more.
    censoring : bool
        If False the censoring flags are ignored and every response is
        treated as observed (the threshold-imputed Gaussian model).
    """

    def __init__(self, dataset, model, rule=None, censoring=True):
        self.model = get_model(model) if isinstance(model, str) else model
        self.dataset = dataset
        self.rule = rule or FixedRule()
        self.censoring = censoring
        self._prep = []
        for s in dataset.subjects:
            cens = s.censored if censoring else np.zeros_like(s.censored)
            self._prep.append((s.y, s.design(), self.model.structure(s.times), cens))
        super().__init__(dim=self.model.dim, n_obs=len(dataset))

    def params(self, theta):
        return self.model.from_working(theta)

    def loglik_i(self, i, theta):
        return self._units(theta, [i])[0]

    def loglik_units(self, theta):
        return self._units(theta, range(self.n_obs))

    def _units(self, theta, indices):
        params = self.model.from_working(theta)
        beta = np.asarray(params.beta)
        threshold = self.dataset.threshold
        out = np.empty(len(indices))
        pending = defaultdict(list)
        for pos, i in enumerate(indices):
            y, X, struct, cens = self._prep[i]
            V = self.model.covariance(params, None, cache=struct)
            try:
                logdens, b, L = _subject_terms(y, X @ beta, V, cens, threshold)
            except np.linalg.LinAlgError as exc:
                raise EvaluationError("subject covariance is not positive definite",
                                      unit=i) from exc
            out[pos] = logdens
            if b is not None:
                pending[b.size].append((pos, b, L))
        for items in pending.values():
            pos = [it[0] for it in items]
            p = self.rule(np.stack([it[1] for it in items]), np.stack([it[2] for it in items]))
            if np.any(~(p > 0)):
                bad = pos[int(np.flatnonzero(~(p > 0))[0])]
                raise EvaluationError("censored probability underflowed to zero",
                                      unit=list(indices)[bad])
            out[pos] += np.log(p)
        return out

    def natural(self, theta):
        return self.model.from_working(theta).to_vector()


def _moment_start(dataset, model):
    """Crude natural-scale guess from pooled least squares."""
    X = np.vstack([s.design() for s in dataset.subjects])
    y = np.concatenate([s.y for s in dataset.subjects])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    s2 = float(np.mean((y - X @ beta) ** 2))
    if model.name == "ar":
        return ArParams(tuple(beta), sigma2_w=s2 / 2, delta=0.5, sigma2_e=s2 / 2)
    return ReParams(tuple(beta), sigma2_0=s2 / 4, sigma2_1=s2 / 40, sigma_01=0.0,
                    sigma2_e=s2 / 2)


def imputed_start(dataset, model, config=None):
    """Working-scale start: Gaussian MLE with censored values set to the threshold.

    The imputed-data likelihood is maximised with Marquardt from a pooled
    least-squares guess; the last iterate is returned even if that fit did
    not meet its stopping value.
    """
    from ..optimizers import OptimizerConfig, fit

    model = get_model(model) if isinstance(model, str) else model
    problem = CensoredMixedModel(dataset, model, censoring=False)
    theta0 = model.to_working(_moment_start(dataset, model))
    result = fit(problem, theta0, "marquardt", config or OptimizerConfig())
    return result.theta_hat
