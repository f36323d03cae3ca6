import numpy as np
import pytest

from amalgamlab import gaussian, make_grid, sample


@pytest.fixture(scope="session")
def grid1():
    return make_grid(1, 1024, 20 * np.pi)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(1, 256, 8 * np.pi)


@pytest.fixture(scope="session")
def unit_gaussian(grid1):
    return sample(grid1, gaussian())


def gaussian_suite(grid, count=50, seed=0):
    """Random modulated Gaussians well inside the box."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        c = rng.uniform(-5, 5)
        w = rng.uniform(0.5, 2.0)
        k = rng.uniform(-3, 3)
        a = rng.normal() + 1j * rng.normal()
        f = sample(grid, gaussian(c, w, k))
        out.append(f.like(a * f.values))
    return out


ACCEPTANCE_LINES = []


def verdict(number, title, ok, detail=""):
    """Record a PASS/FAIL line for an acceptance criterion and assert it."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
