import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from criteria_log import CRITERIA  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
