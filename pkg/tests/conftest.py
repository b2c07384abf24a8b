import sys
from pathlib import Path

# make the shared oracle and instance helpers importable as plain modules
sys.path.insert(0, str(Path(__file__).parent))

import report  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not report.LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(report.LINES):
        terminalreporter.write_line(report.LINES[k])
