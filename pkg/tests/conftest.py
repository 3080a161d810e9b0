import numpy as np
import pytest

from graphflow.domain import ContactAngle, Shape, build_mesh


@pytest.fixture(scope="session")
def unit_interval():
    return build_mesh(Shape.interval(0.0, 1.0), 0.02)


@pytest.fixture(scope="session")
def disk_coarse():
    return build_mesh(Shape.disk(1.0), 0.1, ContactAngle(0.3))


@pytest.fixture(scope="session")
def disk_baseline():
    return build_mesh(Shape.disk(1.0), 0.05, ContactAngle(0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; the lines are echoed after the run."""

    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
