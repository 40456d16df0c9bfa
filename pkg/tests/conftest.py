import functools

import numpy as np
import pytest

from ubsde.hybrid import AlphaGrid, HybridEnsemble, TimeGrid
from ubsde.processes import simulate


@functools.lru_cache(maxsize=16)
def make_bundle(N=50, M=10000, L=5, T=1.0, seed=0, m=1, d=1):
    return simulate(TimeGrid.uniform(T, N), HybridEnsemble(AlphaGrid.uniform(L), M, seed), m=m, d=d)


def rms(a):
    return float(np.sqrt(np.mean(np.square(a))))


@pytest.fixture
def small_bundle():
    return make_bundle(N=20, M=2000, L=5)


@pytest.fixture
def desk_bundle():
    return make_bundle(N=50, M=10000, L=5)


# acceptance lines, printed after the run so they survive output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
