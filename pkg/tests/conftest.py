import pytest

CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance outcome; the terminal summary prints one line per criterion."""

    def record(number, title, passed, detail=""):
        CRITERIA[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number}. {title}: {detail}")
