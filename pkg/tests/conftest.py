import re

_VERDICT = re.compile(r"^(PASS|FAIL) criterion \d+")
_lines = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    _lines.extend(line for line in report.capstdout.splitlines() if _VERDICT.match(line))


def pytest_terminal_summary(terminalreporter):
    if not _lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_lines, key=lambda l: int(l.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
