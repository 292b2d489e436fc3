import warnings

import numpy as np
import pytest

from ddelm.case import DdmCase
from ddelm.linalg import RankWarning

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_rank_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        yield


def toy_case(problem="poisson", grid=(1, 2), n=64, k=4, **kw):
    return DdmCase(problem=problem, grid=grid, n=n, k=k, **kw)


def toy_setup(problem="poisson", grid=(1, 2), n=64, k=4, **kw):
    case = toy_case(problem, grid, n, k, **kw)
    layout = case.build_layout()
    return case, case.build_problem(), layout, case.build_bases(layout)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / np.linalg.norm(b)
