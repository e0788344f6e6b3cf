import pytest

_RESULTS = {}
_NOTES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _RESULTS[number] = (title, "PASS" if rep.passed else "FAIL")


@pytest.fixture
def note():
    """Record an informational line for the acceptance summary."""
    return _NOTES.append


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status = _RESULTS[number]
        tr.write_line(f"[{status}] criterion {number:2d}: {title}")
    for line in _NOTES:
        tr.write_line(f"  info: {line}")
