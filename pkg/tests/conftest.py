import pytest

from lidarmask.packet import reference_layout
from lidarmask.synthetic import random_packets, synthetic_packets

_criteria = {}
_measured = {}


@pytest.fixture(scope="session")
def layout():
    return reference_layout()


@pytest.fixture(scope="session")
def structured():
    """Two seconds of the synthetic room scene."""
    return synthetic_packets(1500, seed=7)


@pytest.fixture(scope="session")
def noisy():
    return random_packets(64, seed=3)


@pytest.fixture
def measured(request):
    """Record a measured value to show beside the criterion verdict."""
    def note(text):
        request.node.user_properties.append(("measured", text))
    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number = None
    for key, value in report.user_properties:
        if key == "criterion":
            number, title = value
            prev = _criteria.get(number, (title, True))
            _criteria[number] = (title, prev[1] and report.passed)
    if number is not None and report.when == "call":
        notes = [v for k, v in report.user_properties if k == "measured"]
        _measured.setdefault(number, []).extend(notes)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", tuple(mark.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"AC{number:<2d} {'PASS' if ok else 'FAIL'}  {title}")
        for note in _measured.get(number, []):
            terminalreporter.write_line(f"      {note}")
