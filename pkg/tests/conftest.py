"""Shared pytest wiring: collects acceptance verdicts for the run summary."""

_LINES: list[str] = []


def record(line: str) -> None:
    """Stash one acceptance verdict; all of them print at the end of the run."""
    _LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance checks")
        for line in _LINES:
            terminalreporter.write_line(line)
