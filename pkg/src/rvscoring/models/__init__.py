"""Test-problem and simulation models: analytic oracles, censored mixed models, MVN CDF."""
from .analytic import *  # noqa: F401,F403
from .io import *  # noqa: F401,F403
from .longitudinal import *  # noqa: F401,F403
from .mvn import *  # noqa: F401,F403
from . import analytic, io, longitudinal, mvn

__all__ = analytic.__all__ + io.__all__ + longitudinal.__all__ + mvn.__all__
