import numpy as np
import pytest

from mvskopt.dataio import SyntheticSpec, generate_returns
from mvskopt.moments import estimate_moments


def synthetic_moments(n, seed, n_obs=None, skew=1.0):
    return estimate_moments(generate_returns(SyntheticSpec(n, n_obs, seed, skew)))


def random_feasible(rng, n, leverage=1.0, size=None):
    """Points of ``{sum w = 1, ||w||_1 <= L}``: Dirichlet draws, pushed outward for L > 1."""
    k = 1 if size is None else size
    w = rng.dirichlet(np.ones(n), size=k)
    if leverage > 1:
        v = rng.dirichlet(np.ones(n), size=k) - 1.0 / n
        for i in range(k):
            a = v[i]
            # largest step keeping the l1 norm within L
            lo, hi = 0.0, 1e3
            for _ in range(60):
                mid = (lo + hi) / 2
                if np.abs(w[i] + mid * a).sum() <= leverage:
                    lo = mid
                else:
                    hi = mid
            w[i] = w[i] + rng.uniform(0, lo) * a
    return w[0] if size is None else w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def record(num, ok, detail, info=False):
        tag = "INFO" if info else ("PASS" if ok else "FAIL")
        line = f"criterion {num:>2} {tag}: {detail}"
        request.config.acceptance_lines.append((num, info, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(lines, key=lambda x: (x[0], x[1])):
            terminalreporter.write_line(line)
