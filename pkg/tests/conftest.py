import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion and print it."""

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
