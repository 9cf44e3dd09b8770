import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(key, title, passed, detail)."""

    def record(key, title, passed, detail=""):
        _RESULTS[key] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS):
        title, passed, detail = _RESULTS[key]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {key}: {title} -- {detail}")
