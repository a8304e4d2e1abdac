"""Shared pytest plumbing: collect acceptance verdict lines and print
them after the run, outside output capture, so a plain ``pytest -v``
always shows one PASS/FAIL line per criterion."""

VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.write_sep("-", "acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)
