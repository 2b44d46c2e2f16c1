import pytest

CRITERIA: list = []


@pytest.fixture
def report():
    """Record one acceptance line: report(tag, passed, detail)."""

    def add(tag, passed, detail):
        line = f"{tag:<4} {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: (int("".join(c for c in s.split()[0] if c.isdigit())), s)):
            terminalreporter.write_line(line)
