import sys

import numpy as np
import pytest
from hypothesis import settings

from gridexplore.world import GridEnvironment

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def grid_env(rows, cell_size=0.25, F=4, seed=0):
    """Environment from strings: '#' obstacle, anything else free. rows[0] is y = 0."""
    occ = np.array([[c == "#" for c in r] for r in rows], bool)
    h, w = occ.shape
    sig = np.random.default_rng(seed).random((h, w, F))
    return GridEnvironment(w, h, cell_size, occ, sig, preset="small-cluttered", seed=seed)


def box_env(w, h, **kw):
    rows = ["#" * w] + ["#" + "." * (w - 2) + "#" for _ in range(h - 2)] + ["#" * w]
    return grid_env(rows, **kw)


def bfs_oracle(passable, start):
    """Plain-Python BFS step distances over 4-neighbours, -1 where unreachable."""
    from collections import deque
    h, w = passable.shape
    dist = -np.ones((h, w), int)
    sx, sy = start
    if not passable[sy, sx]:
        return dist
    dist[sy, sx] = 0
    q = deque([(sx, sy)])
    while q:
        x, y = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and passable[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = dist[y, x] + 1
                q.append((nx, ny))
    return dist


@pytest.fixture(scope="session")
def small_env():
    from gridexplore.world import generate_environment
    return generate_environment(3, "small-cluttered")


@pytest.fixture(scope="session")
def large_env():
    from gridexplore.world import generate_environment
    return generate_environment(3, "large-open")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(mod.LINES):
        terminalreporter.write_line(line)
    for row in mod.DETAILS:
        terminalreporter.write_line(row)
