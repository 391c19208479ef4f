"""Collects the acceptance verdicts so they print as one block at the end of the run."""

VERDICTS: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
