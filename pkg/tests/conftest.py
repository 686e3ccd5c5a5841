import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion: ``criterion(k, passed, detail)``."""

    def record(k, passed, detail=""):
        _RESULTS[k] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
