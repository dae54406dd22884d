import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

GATE_LINES: list[str] = []


@pytest.fixture
def gate(capsys):
    """Record one acceptance line and fail the test if the criterion is not met."""

    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        GATE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
