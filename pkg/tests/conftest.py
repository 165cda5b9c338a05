import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def record(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float):
        passed = bool(ok) and elapsed < limit
        line = (f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail} "
                f"[{elapsed:.1f}s, limit {limit:g}s]")
        _LINES[number] = line
        print(line)
        assert ok, line
        assert elapsed < limit, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
