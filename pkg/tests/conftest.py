"""Shared pytest config: acceptance-criterion reporting."""

_CRITERION_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Collect one acceptance line; echoed live and in the final summary."""
    line = f"ACCEPTANCE CRITERION {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
    _CRITERION_LINES.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(_CRITERION_LINES)):
            terminalreporter.write_line(line)
