import os

import pytest

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; the terminal summary prints them all."""

    def _report(name, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        print(ACCEPTANCE_LINES[-1])

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
