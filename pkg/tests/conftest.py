import sys
from pathlib import Path

import pytest

DOUBLE = Path(__file__).with_name("plugin_double.py")


@pytest.fixture
def double_cmd():
    """Command line of the scripted plugin in a given mode."""

    def make(mode):
        return [sys.executable, str(DOUBLE), mode]

    return make


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line, print it, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
