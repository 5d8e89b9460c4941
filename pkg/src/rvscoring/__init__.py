"""Robust-variance scoring: Newton-like likelihood maximisation from individual scores."""
from .errors import (
    BoundaryError,
    ConfigurationError,
    EvaluationError,
    GSingularError,
    IntegrationError,
    RVSError,
    StepError,
)
from .inference import (
    InferenceReport,
    conservative_region,
    conservative_region_contains,
    model_variance,
    sandwich_variance,
    score_ellipsoid_contains,
    wald_intervals,
)
from .likelihood import LikelihoodProblem, ScoreBundle, StepRule, hessian, score_bundle, total_loglik
from .optimizers import FitResult, OptimizerConfig, fit
from .scoring import Penalty, ScoringMatrix, build_g, build_g_penalized

__version__ = "0.1.0"
