import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = {}


@pytest.fixture
def acceptance():
    """Records one PASS/FAIL line per acceptance criterion."""
    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        terminalreporter.write_line(_LINES[key])
