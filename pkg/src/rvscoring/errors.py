"""Exception hierarchy shared by the optimizers and models."""


class RVSError(Exception):
    """Base class for all errors raised by rvscoring."""


class ConfigurationError(RVSError, ValueError):
    """Invalid option or argument combination."""


class EvaluationError(RVSError):
    """A log-likelihood could not be evaluated at the requested parameters.

    Attributes
    ----------
    unit : int or None
        Index of the observation unit whose contribution failed, when known.
    theta : ndarray or None
        Parameter vector at which the failure occurred.
    """

    def __init__(self, message, unit=None, theta=None):
        super().__init__(message)
        self.unit = unit
        self.theta = theta


class IntegrationError(EvaluationError):
    """Multivariate normal integration did not reach the requested tolerance."""

    def __init__(self, message, error_estimate=None, **kwargs):
        super().__init__(message, **kwargs)
        self.error_estimate = error_estimate


class GSingularError(RVSError):
    """The scoring matrix stayed singular after the safeguard ladder."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class StepError(RVSError):
    """An iteration could not produce an acceptable new point."""

    def __init__(self, message, trials=None):
        super().__init__(message)
        self.trials = trials if trials is not None else []


class BoundaryError(RVSError):
    """The Hessian is not positive definite at the reported maximum."""
