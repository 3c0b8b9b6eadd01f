import numpy as np
import pytest

from refrigctl.thermo import default_params


@pytest.fixture
def defaults():
    return default_params(10)


@pytest.fixture
def small():
    return default_params(4)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
