ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, visible without -s
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
