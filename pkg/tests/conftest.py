import numpy as np
import pytest

from slicereg.phantom import PhantomConfig, generate_phantom


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomConfig(seed=0))


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom(PhantomConfig(size=32, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
