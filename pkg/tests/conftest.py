import pytest

ACCEPTANCE_LINES: list[str] = []


def record(index: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {index} [{title}]: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def acceptance_record():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
