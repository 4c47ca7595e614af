import pytest

_LINES = []


@pytest.fixture
def criterion():
    """record(n, ok, detail): one summary line per acceptance criterion."""
    def record(n, ok, detail):
        _LINES.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
