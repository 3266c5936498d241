"""Shared pytest hooks: acceptance verdicts are echoed in the terminal summary."""

ACCEPTANCE_LINES: dict[str, str] = {}


def record_verdict(key: str, passed: bool, detail: str) -> str:
    line = f"{key}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (len(k), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
