import pytest

# (criterion number, passed, detail) appended by the acceptance tests
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    def report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_RESULTS.append((number, ok, detail))
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
