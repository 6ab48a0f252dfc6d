import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record a one-line verdict per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append((number, f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
