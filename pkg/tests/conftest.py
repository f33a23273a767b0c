import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one acceptance criterion's outcome for the terminal summary."""
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip())
