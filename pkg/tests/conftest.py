import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def full_row_rank(rng, m, n):
    """Random m x n matrix, well conditioned with probability one."""
    return rng.standard_normal((m, n))


_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Log one acceptance line; it is echoed now and again in the terminal summary."""

    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
