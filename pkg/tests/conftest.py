import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Append one ``CRITERION n PASS|FAIL: detail`` line per acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
