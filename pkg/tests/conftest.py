import numpy as np
import pytest

from gqlasso.model import GroupedDesign


def random_instance(seed, n=40, sizes=(2, 2, 2, 2, 2), noise=1.0):
    """Gaussian design, a few nonzero leading groups, Normal noise."""
    rng = np.random.default_rng(seed)
    r = sum(sizes)
    X = rng.standard_normal((n, r))
    beta = np.zeros(r)
    beta[: min(4, r)] = [1.0, -1.0, 0.5, 0.5][: min(4, r)]
    y = X @ beta + noise * rng.standard_normal(n)
    return GroupedDesign(X, sizes), y


@pytest.fixture
def intercept_data():
    return GroupedDesign(np.ones((4, 1)), (1,)), np.array([1.0, 2.0, 3.0, 10.0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
