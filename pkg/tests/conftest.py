"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "passed": True, "ran": False, "failed": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["ran"] = True
        if report.failed:
            entry["passed"] = False
            entry["failed"].append(item.name)
        elif report.skipped:
            entry["passed"] = False
            entry["failed"].append(f"{item.name} (skipped)")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        if not r["ran"]:
            continue
        status = "PASS" if r["passed"] else "FAIL"
        extra = "" if r["passed"] else f"  [{', '.join(r['failed'])}]"
        terminalreporter.write_line(f"criterion {number:2d} {status}: {r['title']}{extra}")
