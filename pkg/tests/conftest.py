import numpy as np
import pytest

from asiplab.dynamics import standard_table
from asiplab.measure import SRBMeasure


@pytest.fixture(scope="session")
def table():
    return standard_table()


@pytest.fixture(scope="session")
def measure(table):
    return SRBMeasure(table)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
