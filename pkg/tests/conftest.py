import numpy as np
import pytest

from ncgshape import mesh as M

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def disc2():
    return M.generate_unit_disc(2)


@pytest.fixture(scope="session")
def disc3():
    return M.generate_unit_disc(3)


@pytest.fixture(scope="session")
def ellipse3(disc3):
    return M.scale(disc3, 1.3, 0.8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
