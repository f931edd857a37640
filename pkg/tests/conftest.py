"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test gates")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and (report.failed or report.skipped)):
        if report.skipped:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else ""
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
            reason = ""
        prev = _RESULTS.get(number)
        # a criterion split over several tests fails if any part fails
        if prev is None or prev[0] == "PASS" or status == "FAIL":
            _RESULTS[number] = (status, title, reason)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, reason = _RESULTS[number]
        line = f"criterion {number:2d} {status}: {title}"
        if reason:
            line += f" ({reason.removeprefix('Skipped: ')})"
        terminalreporter.write_line(line)
