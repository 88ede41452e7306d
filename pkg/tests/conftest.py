from __future__ import annotations

import numpy as np
import pytest

from rwre.environment import Environment, EnvironmentLaw


@pytest.fixture
def const2() -> Environment:
    return Environment(EnvironmentLaw(2, 0.25, "constant"))


@pytest.fixture
def const3() -> Environment:
    return Environment(EnvironmentLaw(3, 1 / 6, "constant"))


@pytest.fixture
def env2() -> Environment:
    return Environment(EnvironmentLaw(2, 0.1, "clipped-simplex", {}, 7))


@pytest.fixture
def env3() -> Environment:
    return Environment(EnvironmentLaw(3, 0.1, "clipped-simplex", {}, 11))


def origin(d: int) -> np.ndarray:
    return np.zeros(d, dtype=np.int64)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line(capsys):
    """Print one pass/fail line immediately and repeat it in the terminal summary."""

    def emit(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
