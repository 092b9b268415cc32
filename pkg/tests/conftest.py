"""Shared test plumbing: the acceptance-criterion verdict board.

Per-test output is captured by pytest, so the one-line PASS/FAIL verdicts
the acceptance tests produce are recorded here and replayed in the terminal
summary, where they are always visible.
"""

verdicts = []


def record_verdict(line):
    verdicts.append(line)
    print(line)   # also inline, for -s runs


def pytest_terminal_summary(terminalreporter):
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
