"""Shared pytest hooks: one PASS/FAIL summary line per acceptance criterion."""

import pytest

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed):
        return
    number, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    # parametrized criteria pass only if every case passes
    if ACCEPTANCE_RESULTS.get(number, (title, "PASS"))[1] == "PASS":
        ACCEPTANCE_RESULTS[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, status = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
