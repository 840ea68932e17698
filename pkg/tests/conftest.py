import numpy as np
import pytest

from lyapcmdp.cmdp import TransientCmdp, deterministic_policy

SAFE, RISKY = 0, 1


def make_chain2(d0: float = 1.0) -> TransientCmdp:
    """s0 --safe (c=2)--> s1 --any (c=1)--> end;  s0 --risky (c=1)--> end;  d = [0, 1]."""
    P = np.zeros((2, 2, 2))
    P[0, SAFE, 1] = 1.0
    cost = np.array([[2.0, 1.0], [1.0, 1.0]])
    return TransientCmdp(2, 2, P, cost, np.array([0.0, 1.0]), 0, d0, 2, name="chain2")


@pytest.fixture
def chain2():
    return make_chain2()


@pytest.fixture
def safe(chain2):
    return deterministic_policy(chain2, [SAFE, SAFE])


@pytest.fixture
def risky(chain2):
    return deterministic_policy(chain2, [RISKY, SAFE])


ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    """Log one acceptance line; it is echoed now and again in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
