import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}"
        lines.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
