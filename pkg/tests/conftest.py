import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion_line():
    """Record one pass/fail line; all lines are repeated in the terminal summary."""

    def emit(number: int, ok: bool, text: str) -> None:
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {text}"
        print(line)
        _LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
