import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one ``criterion N: PASS|FAIL`` line, echoed in the terminal summary."""

    def record(number, label, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {label}"
        if detail:
            line += f"  [{detail}]"
        _VERDICTS.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS, key=lambda t: t[0]):
        terminalreporter.write_line(line)
