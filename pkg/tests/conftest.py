"""Collects the acceptance-criterion result lines and echoes them in the
terminal summary, so a plain pytest run shows one line per criterion."""

criterion_lines = []


def record_criterion(line: str) -> None:
    criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
