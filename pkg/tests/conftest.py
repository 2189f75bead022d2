import pytest

ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Store one acceptance verdict; printed in the terminal summary."""
    def record(number, title, passed, detail=""):
        ACCEPTANCE.append((number, title, bool(passed), detail))
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"{number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")
