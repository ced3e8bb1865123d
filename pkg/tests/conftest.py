import numpy as np
import pytest
from hypothesis import settings

from funfuse.design import assemble
from funfuse.simgen import ScenarioSpec, generate

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def s1_small():
    """Scenario S1, n=12: dataset, truth and assembled design."""
    ds, truth = generate(ScenarioSpec("s1", "balanced", 12, seed=4))
    return ds, truth, assemble(ds)


@pytest.fixture(scope="session")
def s2_40():
    ds, truth = generate(ScenarioSpec("s2", "balanced", 40, seed=1))
    return ds, truth, assemble(ds)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
