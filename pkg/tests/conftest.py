import numpy as np
import pytest

from snse_lab.spectral import DomainSpec, estimate_universal_C, spectral_for

# filled by the acceptance suite, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def d():
    return DomainSpec()


@pytest.fixture(scope="session")
def sp(d):
    return spectral_for(d)


@pytest.fixture(scope="session")
def consts(d):
    return estimate_universal_C(d, 1000, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
