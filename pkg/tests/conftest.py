import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pkg", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("pkg")

UNIT2 = np.array([[0.0, 1.0], [0.0, 1.0]])
UNIT1 = np.array([[0.0, 1.0]])


@pytest.fixture
def unit2():
    return UNIT2.copy()


@pytest.fixture
def unit1():
    return UNIT1.copy()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
