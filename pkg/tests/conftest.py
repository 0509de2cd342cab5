import sys
from pathlib import Path

import pytest

# the oracles module lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

# criterion name -> list of outcomes of the tests that check it
_CRITERIA: dict[str, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    results = _CRITERIA.setdefault(marker.args[0], [])
    if report.when == "call" or (report.when == "setup" and not report.passed):
        results.append("skipped" if report.skipped else "passed" if report.passed else "failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _CRITERIA.items():
        if "failed" in results:
            status = "FAIL"
        elif results and all(r == "skipped" for r in results):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"{status}  {name}")
