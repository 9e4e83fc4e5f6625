import numpy as np
import pytest

_LINES_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def report(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[_LINES_KEY]

    def emit(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].split(".")[0].rstrip(":"))):
            terminalreporter.write_line(line)
