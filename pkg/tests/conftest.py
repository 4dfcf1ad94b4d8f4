import numpy as np
import pytest

from wgbrinkman import _kernels
from wgbrinkman.verify import brinkman_2d_case, convergence_study

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    before = _kernels.USE_NUMBA
    _kernels.set_backend(request.param == "numba")
    yield request.param
    _kernels.set_backend(before)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def case():
    return brinkman_2d_case()


class StudyCache:
    """Convergence studies shared between acceptance criteria."""

    def __init__(self, case):
        self.case = case
        self.reports = {}

    def get(self, family, k, stabilized, levels=(4, 5, 6)):
        key = (family, k, stabilized, tuple(levels))
        if key not in self.reports:
            self.reports[key] = convergence_study(family, k, levels, stabilized=stabilized, case=self.case)
        return self.reports[key]


@pytest.fixture(scope="session")
def studies(case):
    return StudyCache(case)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
