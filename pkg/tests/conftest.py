import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion_log(request):
    """Append a line to the acceptance summary printed at the end of the session."""
    lines = request.config.stash.setdefault(_LINES, [])

    def log(line: str) -> None:
        print(line)
        lines.append(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
