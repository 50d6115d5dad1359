import numpy as np
import pytest

from mkflow.distributions import Grid, MassDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_distribution(rng, h, w, zero_fraction=0.25, scale=1.0):
    values = rng.uniform(0.0, 1.0, size=(h, w)) * (rng.uniform(size=(h, w)) >= zero_fraction)
    return MassDistribution.from_array(values * scale)


def delta_pair(width, height, a, b, mass_a=1.0, mass_b=1.0):
    """Deltas at (col, row) pixels ``a`` and ``b`` on a width x height grid."""
    grid = Grid(width, height)
    f0 = MassDistribution.delta(grid, a[1] * width + a[0], mass_a)
    f1 = MassDistribution.delta(grid, b[1] * width + b[0], mass_b)
    return f0, f1


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[f"{number:02d}"] = f"criterion {number} ({name}): {'PASS' if passed else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
