import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

#: (criterion number, passed, detail) appended by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda item: item[0]):
        terminalreporter.write_line(line)
