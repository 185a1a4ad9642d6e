"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion
at the end of the run."""

import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "failed": [], "ran": 0})
    entry["ran"] += report.when == "call"
    if report.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        status = "FAIL" if entry["failed"] else "PASS"
        line = f"criterion {number:2d} {status}  {entry['title']}"
        if entry["failed"]:
            line += "  (failing: " + ", ".join(entry["failed"]) + ")"
        terminalreporter.write_line(line)
