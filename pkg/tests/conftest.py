import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

C1 = np.array([[0.9, 0.1], [0.3, 0.7]])
C2 = np.array([[0.3, 0.7], [0.9, 0.1]])
P_A = np.array([[0.0, 1.0], [1.0, 0.0]])
P_A1 = np.array([[0.3, 0.7], [0.7, 0.3]])
P_A2 = np.array([[0.9, 0.1], [0.5, 0.5]])


def random_stochastic(rng, n, rows=None, positive=True):
    rows = n if rows is None else rows
    M = rng.dirichlet(np.ones(n), size=rows)
    if positive:
        M = 0.98 * M + 0.02 / n
    return M


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
