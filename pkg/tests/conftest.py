import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from petphys.projector import ProjectorGeometry  # noqa: E402


@pytest.fixture(scope="session")
def small_geom():
    return ProjectorGeometry.for_image(16, 16, 4.0, 24)


@pytest.fixture(scope="session")
def tiny_geom():
    return ProjectorGeometry.for_image(8, 8, 2.0, 12)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when != "call" and rep.passed:
        return
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _CRITERIA.get(number)
    # a criterion split over several tests passes only if all of them do
    if prev is None or prev[1] == "PASS":
        joined = detail if prev is None or not prev[2] else "; ".join(filter(None, [prev[2], detail]))
        _CRITERIA[number] = (title, status, joined)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
