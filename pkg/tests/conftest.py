"""Shared pytest hooks.

The acceptance gate records one verdict line per shipping criterion; this
hook echoes them after the run so they are visible even for passing tests
(whose captured stdout pytest otherwise swallows).
"""

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)
