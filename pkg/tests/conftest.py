import numpy as np
import pytest
from hypothesis import settings

from spatialmap.geom import PointSet
from spatialmap.models import Dataset

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def brute_nn(Q, R, exclude_self=False):
    """Reference nearest neighbour by explicit double loop."""
    Q, R = np.asarray(Q, float), np.asarray(R, float)
    idx = np.empty(len(Q), dtype=int)
    dist = np.empty(len(Q))
    for i, q in enumerate(Q):
        best, bd = -1, np.inf
        for j, r in enumerate(R):
            if exclude_self and i == j:
                continue
            d = np.sqrt(np.sum((q - r) ** 2))
            if d < bd:
                best, bd = j, d
        idx[i], dist[i] = best, bd
    return idx, dist


def clustered_points(n, n_clusters, seed, spread=3.0, extent=100.0):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(10, extent - 10, (n_clusters, 2))
    which = rng.integers(0, n_clusters, n)
    return PointSet(centers[which] + rng.normal(0, spread, (n, 2)), "projected")


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(80, 3))
    y = 2 * X[:, 0] - X[:, 1] ** 2 + rng.normal(0, 0.3, 80)
    pts = PointSet(rng.uniform(0, 50, (80, 2)), "projected")
    return Dataset(X, y, ["a", "b", "c"], pts)


ACCEPTANCE_LINES = []


def record(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
