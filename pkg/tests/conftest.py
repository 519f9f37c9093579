import numpy as np
import pytest

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """Record and print a PASS/FAIL line, then fail the test if needed."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
