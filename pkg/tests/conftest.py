import numpy as np
import pytest

from amplab.field_model import TorusGrid, build_beamlet_model


def random_model(rng, dim=None, modes=None, points=None, max_index=2, length=2 * np.pi):
    """Random plane-wave model with distinct wavevectors resolved by the grid."""
    dim = int(rng.integers(1, 3)) if dim is None else dim
    M = int(rng.integers(1, 4)) if modes is None else modes
    points = points or {1: 64, 2: 32, 3: 16}[dim]
    grid = TorusGrid((length,) * dim, (points,) * dim)
    idx = set()
    while len(idx) < M:
        idx.add(tuple(int(v) for v in rng.integers(-max_index, max_index + 1, dim)))
    return build_beamlet_model(grid, sorted(idx), float(rng.uniform(0.1, 1.5)), rng.uniform(0.3, 1.5, M))


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_KEY, [])

    def report(number, ok, detail):
        lines.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return report


_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
