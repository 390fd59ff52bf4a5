import numpy as np
import pytest

from daup.puf import PufInstance, new_puf


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def puf():
    return new_puf(64, 0.0, 42)


def bias_only(sign: float, n: int = 64) -> PufInstance:
    w = np.zeros(n + 1)
    w[-1] = sign
    return PufInstance(n, w)


def random_challenges(rng, count, n=64):
    return rng.integers(0, 2, (count, n), dtype=np.uint8)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
