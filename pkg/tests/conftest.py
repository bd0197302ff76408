"""Collects the acceptance verdict lines and prints them after the run."""

_REPORT = []


def record(line: str) -> None:
    _REPORT.append(line)


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
