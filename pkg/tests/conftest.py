from pathlib import Path

import numpy as np
import pytest

from ddpd.core import make_rng
from ddpd.datasets import load_dist, make_markov, make_parity

FIXTURES = Path(__file__).parent / "fixtures"

# Filled by the acceptance tests, printed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def d3s4():
    return load_dist(FIXTURES / "D3S4-markov1-seed7.json")


@pytest.fixture(scope="session")
def d2s3():
    return load_dist(FIXTURES / "D2S3-markov1-seed3.json")


@pytest.fixture(scope="session")
def d2s3_factorized():
    return make_markov(0, 2, 3, 5)


@pytest.fixture(scope="session")
def parity2():
    return make_parity(2)


@pytest.fixture
def rng():
    return make_rng(1234)


def all_states(size_s: int, dims_d: int) -> np.ndarray:
    from ddpd.core import decode_states
    return decode_states(np.arange(size_s**dims_d), size_s, dims_d)
