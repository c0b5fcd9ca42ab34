import numpy as np
import pytest

from gkpsense.fock import HilbertConfig
from gkpsense.sbs import SbsParams, prepare_qunaught

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small():
    """Delta=0.3 at a cutoff of 60: cheap but still well converged."""
    return SbsParams(0.3, (0, 0), HilbertConfig(60))


@pytest.fixture(scope="session")
def small_state(small):
    return prepare_qunaught(small)


@pytest.fixture(scope="session")
def ci():
    return SbsParams(0.3, (0, 0), HilbertConfig(100))


@pytest.fixture(scope="session")
def ci_state(ci):
    return prepare_qunaught(ci)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
