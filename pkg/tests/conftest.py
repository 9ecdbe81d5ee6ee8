import numpy as np
import pytest

from oracles import CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_setup():
    """Two-regime synthetic data with a pipeline trained on its first half."""
    from tlr import harness
    return harness.prepare(harness.SyntheticSpec(n=100, m=100, T=160, density=0.02))
