"""Shared pytest plumbing for the suite.

The acceptance tests register one verdict line each; printing them from a
terminal-summary hook keeps them visible under output capture.
"""

acceptance_verdicts = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
