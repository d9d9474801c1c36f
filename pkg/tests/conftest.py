import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from hypothesis import settings

settings.register_profile("ci", max_examples=30, deadline=None)
settings.load_profile("ci")

import pytest

# acceptance criteria: number -> (title, status, detail)
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): test decides one acceptance criterion")


@pytest.fixture()
def detail(request):
    """Attach a one-line measurement summary to the criterion line of this test."""
    def record(text: str) -> None:
        request.node.criterion_detail = text
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    previous = _CRITERIA.get(number, (title, "PASS", ""))[1]
    if previous == "FAIL":
        status = "FAIL"
    _CRITERIA[number] = (title, status, getattr(item, "criterion_detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, text = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}" + (f" [{text}]" if text else ""))
