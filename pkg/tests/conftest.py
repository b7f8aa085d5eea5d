"""Shared pytest plumbing: acceptance pass/fail lines in the summary."""

_REPORT_LINES = []


def record_acceptance(line):
    _REPORT_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _REPORT_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _REPORT_LINES:
            terminalreporter.write_line(line)
