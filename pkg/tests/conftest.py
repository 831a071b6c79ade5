import pytest

from helpers import CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERIA:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(capsys):
    """Call ``criterion(n, title, ok, detail)`` to record and print one verdict line."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}" + (f": {detail}" if detail else "")
        CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record
