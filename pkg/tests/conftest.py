"""Shared pytest wiring.

The acceptance tests register one summary line per criterion; the
terminal-summary hook below re-emits them at the end of the run so the
pass/fail verdicts are visible regardless of output capturing.
"""

CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)
