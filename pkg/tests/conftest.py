import numpy as np
import pytest

from copulanf.numerics import Rng


@pytest.fixture
def rng():
    return Rng(20240501)


def ks_distance(samples, cdf):
    """Two-sided Kolmogorov-Smirnov sup distance against an analytic cdf."""
    x = np.sort(np.asarray(samples))
    n = x.size
    f = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))


ACCEPTANCE_LINES = []


def report(criterion: int, ok: bool, detail: str):
    """Record one acceptance line; printed in the terminal summary whatever the capture mode."""
    line = f"[acceptance {criterion:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((criterion, line))
    print(line)
    return ok


def report_skip(criterion: int, detail: str):
    ACCEPTANCE_LINES.append((criterion, f"[acceptance {criterion:>2}] SKIP  {detail}"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
