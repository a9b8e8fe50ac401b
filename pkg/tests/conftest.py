import pytest

_LINES = []


class Criteria:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(self, number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
        _LINES.append(line)
        print(line)
        return passed


@pytest.fixture(scope="session")
def criteria():
    return Criteria()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
