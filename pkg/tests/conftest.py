import pytest

from emwave.grid_model import build_chain, build_lattice

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def chain20():
    return build_chain(20, 100.0, 5.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def lattice30():
    return build_lattice(30, 30, 100.0, 5.0, 1.0, 2.0, dispatch=1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
