"""Shared test plumbing: the acceptance-criteria report.

Acceptance tests record one line per criterion; the lines are echoed both
immediately (visible under ``pytest -s``) and in the terminal summary, so a
plain ``pytest -v`` run still ends with the full pass/fail list.
"""

_ACCEPTANCE_LINES = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"[{status}] {name}" + (f": {detail}" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
