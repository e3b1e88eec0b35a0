import pytest

from _support import hybrid_session


@pytest.fixture
def make_hybrid():
    return hybrid_session


def pytest_terminal_summary(terminalreporter):
    from _support import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
