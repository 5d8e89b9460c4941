import numpy as np
import pytest
from hypothesis import settings

from rvscoring.models.analytic import analytic_test_models

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracle_models():
    return analytic_test_models(n=200, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_reports():
    """Desk-scale runs of both models at threshold 2.0, shared across test modules."""
    from rvscoring.bench import SimulationScenario, run_scenario

    return {m: run_scenario(SimulationScenario(model=m, threshold=2.0, n_subjects=50,
                                               n_replicates=20, seed=0))
            for m in ("re", "ar")}
