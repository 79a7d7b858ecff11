import numpy as np
import pytest

from floodgen.benchmark import make_benchmark
from floodgen.mesh import Mesh, StormEvent, stratified_split

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bench():
    """(mesh, train, validation, test, truth) for the 200-cell benchmark."""
    mesh, events, truth = make_benchmark()
    train, val, test = stratified_split(events, sample_size=63)
    return mesh, train, val, test, truth


@pytest.fixture
def grid_mesh():
    return Mesh.regular_grid(4, 3, np.tile([0, 0, 1, 1], 3), channel=np.tile([0, 1, 0, 0], 3))


def random_events(mesh, n, seed=0, scale=3.0):
    """Constraint-respecting random storms over ``mesh``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cum = rng.gamma(2.0, scale / 2, mesh.n_cells)
        dur = float(rng.integers(1, 30))
        peak = cum * np.clip(rng.uniform(1 / dur, 1.0, mesh.n_cells), 1 / dur + 1e-3, 0.99)
        if dur == 1.0:
            peak = cum * 0.9
        depth = np.maximum(0.2 * (cum - 1.0), 0.0)
        out.append(StormEvent(i, cum, peak, dur, depth))
    return out
