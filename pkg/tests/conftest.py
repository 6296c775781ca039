import pytest

VERDICTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        VERDICTS[number] = (title, ok, detail)
        with capsys.disabled():
            print(f"\ncriterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"{number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
