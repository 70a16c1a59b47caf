import sys
from pathlib import Path

import pytest

HELPERS = Path(__file__).resolve().parent / "helpers"
if str(HELPERS) not in sys.path:
    sys.path.insert(0, str(HELPERS))

WIRE_STUB = HELPERS / "wire_stub.py"


@pytest.fixture
def stub_command():
    """argv-list builder for the wire-protocol stub backend."""
    def build(*args):
        return [sys.executable, str(WIRE_STUB)] + [str(a) for a in args]
    return build


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per acceptance criterion at the end of the run."""
    rows = []
    for status, label in (("passed", "PASS"), ("xpassed", "PASS"),
                          ("failed", "FAIL"), ("error", "FAIL"),
                          ("xfailed", "FAIL (expected)"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid:
                rows.append((nodeid.rsplit("::", 1)[1], label,
                             getattr(report, "duration", 0.0)))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, label, duration in sorted(rows):
        terminalreporter.write_line(f"{label:>15}  {name}  ({duration:.2f}s)")
