import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import reporting  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    lines = reporting.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
