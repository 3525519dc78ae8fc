import numpy as np
import pytest

from pfgeodesic.network import load_case
from pfgeodesic.powerflow import solve_base


@pytest.fixture(scope="session")
def case2():
    return load_case("case2")


@pytest.fixture(scope="session")
def case4():
    return load_case("case4")


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def base2(case2):
    return solve_base(case2)


@pytest.fixture(scope="session")
def base4(case4):
    return solve_base(case4)


@pytest.fixture(scope="session")
def base9(case9):
    return solve_base(case9)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_directions(n, count, seed):
    rng = np.random.default_rng(seed)
    return [unit(rng.normal(size=n)) for _ in range(count)]


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    lines = test_acceptance.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
