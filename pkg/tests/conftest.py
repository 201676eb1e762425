"""Shared fixtures.  Acceptance verdict lines are echoed in the terminal summary."""
import re

import pytest

VERDICTS: dict[int, str] = {}
_outcomes: dict[int, str] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records and asserts one acceptance criterion."""
    def record(n: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}"
        VERDICTS[n] = line
        print(line)
        assert ok, line
    return record


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m and report.when == "call":
        _outcomes[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        line = VERDICTS.get(n, f"FAIL  criterion {n:2d}: raised before reaching a verdict")
        terminalreporter.write_line(line)
