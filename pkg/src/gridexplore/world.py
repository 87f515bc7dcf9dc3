"""Ground-truth grid world: floorplan generation, motion, depth rays, visibility, paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._kernels import astar, bfs_distances

N_HEADINGS = 12
SIGNATURE_DIM = 16
FORMAT_VERSION = 1

# 4-neighbour steps indexed by cardinal bucket: +x, +y, -x, -y
CARDINAL_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))
PRESETS = ("small-cluttered", "large-open")

_TRIG_DECIMALS = 12
_TIE_EPS = 1e-9
_MARGIN_EPS = 1e-7


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


EXPLORATION_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    heading: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


def heading_angle(heading: int, n_headings: int = N_HEADINGS) -> float:
    return 2.0 * math.pi * heading / n_headings


def cardinal_bucket(heading: int, n_headings: int = N_HEADINGS) -> int:
    """Index into CARDINAL_STEPS of the axis direction nearest to the heading."""
    # floor(4h/H + 1/2) in exact integer arithmetic
    return ((8 * heading + n_headings) // (2 * n_headings)) % 4


def snap(v):
    return np.round(v, _TRIG_DECIMALS) + 0.0


@dataclass(frozen=True)
class Sensor:
    """Forward-facing depth sensor. max_range is in cells."""

    n_rays: int = 32
    fov_deg: float = 90.0
    max_range: float = 16.0
    n_headings: int = N_HEADINGS

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if self.max_range <= 0 or self.fov_deg <= 0:
            raise ValueError("max_range and fov must be positive")

    def offsets(self) -> np.ndarray:
        """Bearing offsets (radians) of each ray relative to the heading, bin-centred."""
        fov = math.radians(self.fov_deg)
        i = np.arange(self.n_rays)
        return -fov / 2 + (i + 0.5) * fov / self.n_rays

    def center(self) -> "Sensor":
        return Sensor(1, self.fov_deg, self.max_range, self.n_headings)

    def table(self) -> "RayTable":
        return ray_table(self.n_headings, self.n_rays, float(self.fov_deg), float(self.max_range))


@dataclass(frozen=True)
class RayTable:
    dx: np.ndarray       # [H, R, L] cell offsets
    dy: np.ndarray
    t_enter: np.ndarray  # [H, R, L] in cells
    t_exit: np.ndarray
    valid: np.ndarray    # [H, R, L]
    graze: np.ndarray    # corner-touch cells with zero chord
    max_range: float


def _walk(dirx: float, diry: float, max_range: float):
    """Supercover traversal from the centre of cell (0, 0).

    Yields (dx, dy, t_enter, t_exit, graze). When the ray passes through a lattice
    corner both side cells are reported as grazed before the diagonal cell.
    """
    out = []
    sx = 1 if dirx > 0 else -1
    sy = 1 if diry > 0 else -1
    tdx = 1.0 / abs(dirx) if dirx != 0 else math.inf
    tdy = 1.0 / abs(diry) if diry != 0 else math.inf
    tmx = 0.5 * tdx
    tmy = 0.5 * tdy
    cx = cy = 0
    t = 0.0
    while t < max_range:
        nxt = min(tmx, tmy)
        out.append((cx, cy, t, min(nxt, max_range), False))
        if nxt >= max_range:
            break
        if abs(tmx - tmy) < _TIE_EPS:
            out.append((cx + sx, cy, nxt, nxt, True))
            out.append((cx, cy + sy, nxt, nxt, True))
            cx += sx
            cy += sy
            tmx += tdx
            tmy += tdy
        elif tmx < tmy:
            cx += sx
            tmx += tdx
        else:
            cy += sy
            tmy += tdy
        t = nxt
    return out


@lru_cache(maxsize=32)
def ray_table(n_headings: int, n_rays: int, fov_deg: float, max_range: float) -> RayTable:
    fov = math.radians(fov_deg)
    offs = -fov / 2 + (np.arange(n_rays) + 0.5) * fov / n_rays
    walks = []
    walks_dir = []
    for h in range(n_headings):
        ang = heading_angle(h, n_headings) + offs
        cs, sn = snap(np.cos(ang)), snap(np.sin(ang))
        walks.append([_walk(float(c), float(s), max_range) for c, s in zip(cs, sn)])
        walks_dir.append(list(zip(cs, sn)))
    L = max(len(w) for row in walks for w in row)
    shape = (n_headings, n_rays, L)
    dx = np.zeros(shape, np.int64)
    dy = np.zeros(shape, np.int64)
    te = np.full(shape, max_range)
    tx = np.full(shape, max_range)
    valid = np.zeros(shape, bool)
    graze = np.zeros(shape, bool)
    for h, row in enumerate(walks):
        for r, w in enumerate(row):
            a = np.array(w, dtype=float)
            n = len(w)
            dx[h, r, :n] = a[:, 0]
            dy[h, r, :n] = a[:, 1]
            te[h, r, :n] = a[:, 2]
            tx[h, r, :n] = a[:, 3]
            graze[h, r, :n] = a[:, 4] > 0
            valid[h, r, :n] = True
            # a chord whose midpoint sits on a cell border cannot be registered
            # unambiguously; treat it as a graze as well
            c, s = walks_dir[h][r]
            tm = 0.5 * (a[:, 2] + a[:, 3])
            margin = np.minimum(0.5 - np.abs(tm * c - a[:, 0]), 0.5 - np.abs(tm * s - a[:, 1]))
            graze[h, r, :n] |= margin < _MARGIN_EPS
    for arr in (dx, dy, te, tx, valid, graze):
        arr.setflags(write=False)
    return RayTable(dx, dy, te, tx, valid, graze, max_range)


@dataclass
class RayResult:
    depth: np.ndarray    # meters
    hit: np.ndarray      # bool per ray
    first: np.ndarray    # index into the ray's cell list of the blocking cell, -1 if none
    cells_x: np.ndarray  # [R, L]
    cells_y: np.ndarray
    valid: np.ndarray


def cast_rays(blocked: np.ndarray, x: int, y: int, heading: int, sensor: Sensor,
              cell_size: float) -> RayResult:
    """Cast the sensor's rays over a boolean blocked grid. Out-of-bounds counts as blocked."""
    tab = sensor.table()
    h = heading % sensor.n_headings
    X = x + tab.dx[h]
    Y = y + tab.dy[h]
    valid = tab.valid[h]
    H, W = blocked.shape
    inb = (X >= 0) & (X < W) & (Y >= 0) & (Y < H)
    occ = np.ones(X.shape, bool)
    occ[inb] = blocked[Y[inb], X[inb]]
    stop = occ & valid
    any_stop = stop.any(axis=1)
    first = np.where(any_stop, stop.argmax(axis=1), -1)
    rows = np.arange(X.shape[0])
    fi = np.maximum(first, 0)
    te = tab.t_enter[h][rows, fi]
    mid = 0.5 * (te + tab.t_exit[h][rows, fi])
    hit = any_stop & ~tab.graze[h][rows, fi] & (mid <= tab.max_range)
    depth = np.where(hit, mid, np.where(any_stop, np.minimum(te, tab.max_range), tab.max_range))
    return RayResult(depth * cell_size, hit, first, X, Y, valid)


def _visible_from(res: RayResult) -> np.ndarray:
    L = res.cells_x.shape[1]
    idx = np.arange(L)[None, :]
    lim = np.where(res.first < 0, L, res.first)[:, None]
    mask = res.valid & ((idx < lim) | ((idx == lim) & res.hit[:, None]))
    xs = res.cells_x[mask]
    ys = res.cells_y[mask]
    key = np.unique(ys * 1_000_003 + xs)
    return np.stack([key % 1_000_003, key // 1_000_003], axis=1)


# ---------------------------------------------------------------------------
# environment


@dataclass
class GridEnvironment:
    width: int
    height: int
    cell_size: float
    occupancy: np.ndarray            # [height, width] bool, True = obstacle
    signatures: np.ndarray           # [height, width, F]
    objects: list = field(default_factory=list)         # [((x, y), object_id)]
    landmark_views: list = field(default_factory=list)  # [Pose]
    preset: str = "small-cluttered"
    seed: int = 0
    room_ids: np.ndarray | None = None

    @property
    def free(self) -> np.ndarray:
        return ~self.occupancy

    def is_free(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height and not self.occupancy[y, x]

    def free_cells(self) -> np.ndarray:
        """(N, 2) array of (x, y) free cells in row-major order."""
        ys, xs = np.nonzero(~self.occupancy)
        return np.stack([xs, ys], axis=1)

    def free_count(self) -> int:
        return int((~self.occupancy).sum())

    def save(self, path) -> None:
        save_environment(self, path)


@dataclass
class Observation:
    depth: np.ndarray
    hit: np.ndarray
    visible: np.ndarray            # (N, 2) of (x, y)
    visible_signatures: np.ndarray  # (N, F)
    collision: bool
    odometry: np.ndarray           # (bx, by, dtheta) in the pre-step body frame
    center_depth: float = 0.0
    hit_signatures: np.ndarray | None = None  # (R, F), zero rows for misses


@dataclass(frozen=True)
class EpisodeSpec:
    env_seed: int
    episode_seed: int
    start: Pose
    T_exp: int
    eta: float

    def __post_init__(self):
        if self.T_exp <= 0:
            raise ValueError("T_exp must be positive")
        if self.eta < 0:
            raise ValueError("noise level must be non-negative")


def raycast(env: GridEnvironment, pose: Pose, sensor: Sensor | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Depth (meters) and hit flag per ray. Misses report max_range."""
    sensor = sensor or Sensor()
    res = cast_rays(env.occupancy, pose.x, pose.y, pose.heading, sensor, env.cell_size)
    return res.depth, res.hit


def center_depth(env: GridEnvironment, pose: Pose, sensor: Sensor | None = None) -> float:
    sensor = (sensor or Sensor()).center()
    return float(raycast(env, pose, sensor)[0][0])


def visible_cells(env: GridEnvironment, pose: Pose, sensor: Sensor | None = None) -> np.ndarray:
    """Cells touched by rays before they are blocked, plus the struck obstacle cells."""
    sensor = sensor or Sensor()
    res = cast_rays(env.occupancy, pose.x, pose.y, pose.heading, sensor, env.cell_size)
    return _visible_from(res)


def view_signature(env: GridEnvironment, pose: Pose, sensor: Sensor | None = None) -> np.ndarray:
    """Mean appearance of the surfaces struck by the rays; falls back to the floor cell."""
    sensor = sensor or Sensor()
    res = cast_rays(env.occupancy, pose.x, pose.y, pose.heading, sensor, env.cell_size)
    return _signature_from(env, pose, res)


def _signature_from(env, pose, res: RayResult) -> np.ndarray:
    rows = np.nonzero(res.hit)[0]
    if len(rows) == 0:
        return env.signatures[pose.y, pose.x].copy()
    fi = res.first[rows]
    xs = res.cells_x[rows, fi]
    ys = res.cells_y[rows, fi]
    return env.signatures[ys, xs].mean(axis=0)


def observe(env: GridEnvironment, pose: Pose, sensor: Sensor | None = None,
            collision: bool = False, odometry=None) -> Observation:
    sensor = sensor or Sensor()
    res = cast_rays(env.occupancy, pose.x, pose.y, pose.heading, sensor, env.cell_size)
    vis = _visible_from(res)
    if odometry is None:
        odometry = np.zeros(3)
    rows = np.nonzero(res.hit)[0]
    fi = res.first[rows]
    hit_sigs = np.zeros((len(res.hit), env.signatures.shape[2]))
    hit_sigs[rows] = env.signatures[res.cells_y[rows, fi], res.cells_x[rows, fi]]
    return Observation(
        depth=res.depth, hit=res.hit, visible=vis,
        visible_signatures=env.signatures[vis[:, 1], vis[:, 0]],
        collision=collision, odometry=np.asarray(odometry, dtype=float),
        center_depth=center_depth(env, pose, sensor), hit_signatures=hit_sigs,
    )


def true_delta(pose: Pose, new_pose: Pose, n_headings: int, cell_size: float) -> np.ndarray:
    """Motion between two poses expressed in the body frame of the first one."""
    th = heading_angle(pose.heading, n_headings)
    c, s = float(snap(math.cos(th))), float(snap(math.sin(th)))
    wx = (new_pose.x - pose.x) * cell_size
    wy = (new_pose.y - pose.y) * cell_size
    dh = (new_pose.heading - pose.heading + n_headings // 2) % n_headings - n_headings // 2
    return np.array([c * wx + s * wy, -s * wx + c * wy, 2 * math.pi * dh / n_headings])


def move(env: GridEnvironment, pose: Pose, action: Action, n_headings: int = N_HEADINGS) -> tuple[Pose, bool]:
    """Deterministic true motion. Returns (new pose, collision)."""
    action = Action(action)
    if action == Action.FORWARD:
        dx, dy = CARDINAL_STEPS[cardinal_bucket(pose.heading, n_headings)]
        nx, ny = pose.x + dx, pose.y + dy
        if env.is_free(nx, ny):
            return Pose(nx, ny, pose.heading), False
        return pose, True
    if action == Action.TURN_LEFT:
        return Pose(pose.x, pose.y, (pose.heading + 1) % n_headings), False
    if action == Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, (pose.heading - 1) % n_headings), False
    return pose, False


def step(env: GridEnvironment, pose: Pose, action: Action, noise=None, rng=None,
         sensor: Sensor | None = None) -> tuple[Pose, Observation]:
    """Apply an action. `noise` is any object with sample(action, rng) -> (3,) perturbation."""
    sensor = sensor or Sensor()
    new_pose, collision = move(env, pose, action, sensor.n_headings)
    reading = true_delta(pose, new_pose, sensor.n_headings, env.cell_size)
    if noise is not None:
        reading = reading + noise.sample(action, rng)
    return new_pose, observe(env, new_pose, sensor, collision, reading)


# ---------------------------------------------------------------------------
# paths


@dataclass
class PathResult:
    path: list | None
    distance: float

    @property
    def reachable(self) -> bool:
        return self.path is not None


def shortest_path(env: GridEnvironment, a, b) -> PathResult:
    """4-connected optimal path between free cells a and b (x, y)."""
    p = astar(~env.occupancy, int(a[0]), int(a[1]), int(b[0]), int(b[1]))
    if len(p) == 0:
        return PathResult(None, math.inf)
    return PathResult([(int(x), int(y)) for x, y in p], (len(p) - 1) * env.cell_size)


def distance_field(env: GridEnvironment, cell) -> np.ndarray:
    """Step distances from cell over free space, -1 where unreachable."""
    return bfs_distances(~env.occupancy, int(cell[0]), int(cell[1]))


def supercover_line(a, b) -> list:
    """Cells touched by the segment between two cell centres (corner touches included)."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    n = max(abs(dx), abs(dy))
    if n == 0:
        return [(ax, ay)]
    length = math.hypot(dx, dy)
    cells = _walk(dx / length, dy / length, length)
    return [(ax + c[0], ay + c[1]) for c in cells]


def line_of_sight(env: GridEnvironment, a, b) -> bool:
    """True if no obstacle lies on the segment strictly between cells a and b."""
    for c in supercover_line(a, b):
        if c == tuple(a) or c == tuple(b):
            continue
        if not env.is_free(*c):
            return False
    return True


def sample_episode(env: GridEnvironment, seed: int, T_exp: int, eta: float,
                   n_headings: int = N_HEADINGS) -> EpisodeSpec:
    rng = np.random.default_rng(seed)
    free = env.free_cells()
    x, y = free[rng.integers(len(free))]
    start = Pose(int(x), int(y), int(rng.integers(n_headings)))
    return EpisodeSpec(env.seed, int(seed), start, int(T_exp), float(eta))


# ---------------------------------------------------------------------------
# generation

_CLOSE = np.ones((3, 3), bool)


def close_blocked(blocked: np.ndarray) -> np.ndarray:
    """3x3 morphological closing of a blocked mask (outside treated as open)."""
    pad = np.pad(blocked, 1, constant_values=False)
    return ndimage.binary_closing(pad, structure=_CLOSE)[1:-1, 1:-1]


def largest_component(free: np.ndarray) -> np.ndarray:
    lab, n = ndimage.label(free)
    if n <= 1:
        return free.copy()
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == sizes.argmax()


def settle(occ: np.ndarray) -> np.ndarray:
    """Close gaps and drop isolated pockets until the grid is a fixed point of both."""
    occ = occ.copy()
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    while True:
        nxt = close_blocked(occ)
        nxt = ~largest_component(~nxt)
        if np.array_equal(nxt, occ):
            return occ
        occ = nxt


@dataclass
class GenParams:
    width: int = 24
    height: int = 24
    cell_size: float = 0.25
    min_room: int = 7
    max_depth: int = 2
    door_min: int = 3
    door_max: int = 4
    clutter: float = 0.15
    furniture_max: int = 3
    wide_opening_prob: float = 0.0
    pillars_per_room: int = 0
    wall_furniture_per_room: int = 0
    n_decorations: int = 3
    n_object_classes: int = 6
    signature_dim: int = SIGNATURE_DIM
    signature_noise: float = 0.02

    def __post_init__(self):
        if min(self.width, self.height) < 5 or self.cell_size <= 0 or self.min_room < 3:
            raise ValueError("grid and room sizes must be positive and at least 5x5")
        if self.door_min < 1 or self.door_max < self.door_min:
            raise ValueError("bad door widths")


def preset_params(preset: str) -> GenParams:
    if preset == "small-cluttered":
        return GenParams()
    if preset == "large-open":
        return GenParams(width=96, height=96, min_room=14, max_depth=4, door_min=3, door_max=6,
                         clutter=0.0, wide_opening_prob=0.3, pillars_per_room=2,
                         wall_furniture_per_room=2, n_decorations=8)
    raise ValueError(f"unknown preset {preset!r}")


def _bsp(rng, x0, y0, x1, y1, depth, p: GenParams, rooms, splits):
    """Split the inclusive rectangle recursively. Walls are one cell thick."""
    w, h = x1 - x0 + 1, y1 - y0 + 1
    can_v = w >= 2 * p.min_room + 1
    can_h = h >= 2 * p.min_room + 1
    if depth >= p.max_depth or not (can_v or can_h):
        rooms.append((x0, y0, x1, y1))
        return
    if can_v and can_h:
        vertical = w > h if w != h else bool(rng.integers(2))
    else:
        vertical = can_v
    if vertical:
        s = int(rng.integers(x0 + p.min_room, x1 - p.min_room + 1))
        splits.append(("v", s, y0, y1))
        _bsp(rng, x0, y0, s - 1, y1, depth + 1, p, rooms, splits)
        _bsp(rng, s + 1, y0, x1, y1, depth + 1, p, rooms, splits)
    else:
        s = int(rng.integers(y0 + p.min_room, y1 - p.min_room + 1))
        splits.append(("h", s, x0, x1))
        _bsp(rng, x0, y0, x1, s - 1, depth + 1, p, rooms, splits)
        _bsp(rng, x0, s + 1, x1, y1, depth + 1, p, rooms, splits)


def _runs(mask: np.ndarray):
    """(start, length) of maximal True runs in a 1D mask."""
    out = []
    i = 0
    n = len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            out.append((i, j - i))
            i = j
        else:
            i += 1
    return out


def _carve_doors(rng, occ, splits, p: GenParams):
    # deepest splits first so parents see the final child walls
    for kind, s, a0, a1 in reversed(splits):
        if kind == "v":
            both = ~occ[a0:a1 + 1, s - 1] & ~occ[a0:a1 + 1, s + 1]
        else:
            both = ~occ[s - 1, a0:a1 + 1] & ~occ[s + 1, a0:a1 + 1]
        runs = [r for r in _runs(both) if r[1] >= p.door_min]
        if not runs:
            runs = _runs(both)
        if not runs:
            continue
        if rng.random() < p.wide_opening_prob:
            for start, length in runs:
                _open(occ, kind, s, a0 + start, length)
            continue
        start, length = runs[int(rng.integers(len(runs)))]
        width = int(min(length, rng.integers(p.door_min, p.door_max + 1)))
        off = start + int(rng.integers(0, length - width + 1))
        _open(occ, kind, s, a0 + off, width)


def _open(occ, kind, s, a, width):
    if kind == "v":
        occ[a:a + width, s] = False
    else:
        occ[s, a:a + width] = False


def _try_place(occ: np.ndarray, block: tuple[int, int, int, int]) -> np.ndarray | None:
    """Add an obstacle block (x0, y0, w, h) if it costs no other free cell after settling."""
    x0, y0, w, h = block
    cand = occ.copy()
    region = cand[y0:y0 + h, x0:x0 + w]
    if region.any():
        return None
    region[:] = True
    after = ~largest_component(~close_blocked(cand))
    if not np.array_equal(after, cand):
        return None
    return cand


def _furniture(rng, occ, rooms, p: GenParams):
    """Scatter blocks through rooms until the clutter fraction is reached."""
    # fraction of the free space (rooms plus doorways) present before clutter
    target = p.clutter * int((~occ).sum())
    placed = []
    used = 0
    attempts = 0
    while used < target and attempts < 4000:
        attempts += 1
        x0, y0, x1, y1 = rooms[int(rng.integers(len(rooms)))]
        w = int(rng.integers(1, p.furniture_max + 1))
        h = int(rng.integers(1, p.furniture_max + 1))
        if w > x1 - x0 + 1 or h > y1 - y0 + 1:
            continue
        bx = int(rng.integers(x0, x1 - w + 2))
        by = int(rng.integers(y0, y1 - h + 2))
        cand = _try_place(occ, (bx, by, w, h))
        if cand is None:
            continue
        occ[:] = cand
        placed.append((bx, by, w, h))
        used += w * h
    return placed


def _pillars(rng, occ, rooms, p: GenParams):
    placed = []
    for x0, y0, x1, y1 in rooms:
        for _ in range(p.pillars_per_room):
            if x1 - x0 < 10 or y1 - y0 < 10:
                break
            bx = int(rng.integers(x0 + 4, x1 - 4))
            by = int(rng.integers(y0 + 4, y1 - 4))
            # keep 3 free cells around a pillar so it never narrows a passage
            if occ[by - 3:by + 5, bx - 3:bx + 5].any():
                continue
            cand = _try_place(occ, (bx, by, 2, 2))
            if cand is not None:
                occ[:] = cand
    return placed


def _wall_furniture(rng, occ, rooms, p: GenParams):
    placed = []
    for x0, y0, x1, y1 in rooms:
        for _ in range(p.wall_furniture_per_room):
            for _attempt in range(10):
                side = int(rng.integers(4))
                long_, short = int(rng.integers(2, 5)), int(rng.integers(1, 3))
                if side in (0, 1):  # against left / right wall
                    w, h = short, long_
                    bx = x0 if side == 0 else x1 - w + 1
                    by = int(rng.integers(y0 + 1, max(y0 + 2, y1 - h)))
                else:
                    w, h = long_, short
                    by = y0 if side == 2 else y1 - h + 1
                    bx = int(rng.integers(x0 + 1, max(x0 + 2, x1 - w)))
                cand = _try_place(occ, (bx, by, w, h))
                if cand is not None:
                    occ[:] = cand
                    placed.append((bx, by, w, h))
                    break
    return placed


def _room_labels(occ, rooms):
    lab = np.zeros(occ.shape, np.int64)
    for i, (x0, y0, x1, y1) in enumerate(rooms):
        lab[y0:y1 + 1, x0:x1 + 1] = i + 1
    # doors and every obstacle take the label of the nearest room cell
    seed_mask = (lab == 0)
    _, (iy, ix) = ndimage.distance_transform_edt(seed_mask, return_indices=True)
    return lab[iy, ix] - 1


def _free_neighbours(occ, x, y) -> int:
    n = 0
    for dx, dy in CARDINAL_STEPS:
        nx, ny = x + dx, y + dy
        if 0 <= nx < occ.shape[1] and 0 <= ny < occ.shape[0] and not occ[ny, nx]:
            n += 1
    return n


def generate_environment(seed: int, preset: str = "small-cluttered",
                         params: GenParams | None = None) -> GridEnvironment:
    """Procedural floorplan: BSP rooms joined by doors, then clutter and appearance."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    p = params or preset_params(preset)
    rng = np.random.default_rng([int(seed), PRESETS.index(preset)])
    W, H = p.width, p.height
    occ = np.ones((H, W), bool)
    rooms: list = []
    splits: list = []
    _bsp(rng, 1, 1, W - 2, H - 2, 0, p, rooms, splits)
    for x0, y0, x1, y1 in rooms:
        occ[y0:y1 + 1, x0:x1 + 1] = False
    _carve_doors(rng, occ, splits, p)
    occ = settle(occ)

    blocks = []
    if p.pillars_per_room:
        _pillars(rng, occ, rooms, p)
    if p.wall_furniture_per_room:
        blocks += _wall_furniture(rng, occ, rooms, p)
    if p.clutter > 0:
        blocks += _furniture(rng, occ, rooms, p)
    occ = settle(occ)

    F = p.signature_dim
    room_lab = _room_labels(occ, rooms)
    wall_mat = rng.random((len(rooms), F))
    floor_mat = rng.random((len(rooms), F))
    class_mat = rng.random((p.n_object_classes, F))
    sig = np.where(occ[..., None], wall_mat[room_lab], floor_mat[room_lab])

    objects = []
    for i, (bx, by, w, h) in enumerate(blocks):
        cls = int(rng.integers(p.n_object_classes))
        cells = [(x, y) for y in range(by, by + h) for x in range(bx, bx + w) if occ[y, x]]
        if not cells:
            continue
        for x, y in cells:
            sig[y, x] = class_mat[cls]
        best = max(cells, key=lambda c: (_free_neighbours(occ, *c), -(c[1] * W + c[0])))
        if _free_neighbours(occ, *best) > 0:
            objects.append((best, len(objects)))

    # decorations: short wall strips with a unique appearance
    cand = [(x, y) for y in range(1, H - 1) for x in range(1, W - 1)
            if occ[y, x] and _free_neighbours(occ, x, y) > 0]
    order = rng.permutation(len(cand))
    n_dec = 0
    used = np.zeros(occ.shape, bool)
    for k in order:
        if n_dec >= p.n_decorations:
            break
        x, y = cand[k]
        if used[max(0, y - 4):y + 5, max(0, x - 4):x + 5].any():
            continue
        mat = rng.random(F)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = x + dx, y + dy
                if occ[ny, nx] and _free_neighbours(occ, nx, ny) > 0:
                    sig[ny, nx] = mat
                    used[ny, nx] = True
        n_dec += 1

    sig = sig + rng.normal(0.0, p.signature_noise, sig.shape)
    sig = np.clip(sig, 0.0, 1.0)
    return GridEnvironment(W, H, p.cell_size, occ, sig, objects, [], preset, int(seed), room_lab)


# ---------------------------------------------------------------------------
# persistence


def save_environment(env: GridEnvironment, path) -> None:
    objs = np.array([[c[0], c[1], oid] for c, oid in env.objects], dtype=np.int64).reshape(-1, 3)
    lms = np.array([[p.x, p.y, p.heading] for p in env.landmark_views], dtype=np.int64).reshape(-1, 3)
    header = np.array([FORMAT_VERSION, env.width, env.height, env.seed], dtype=np.int64)
    rooms = env.room_ids if env.room_ids is not None else np.zeros((0, 0), np.int64)
    with open(path, "wb") as f:
        np.savez_compressed(f, header=header, cell_size=np.float64(env.cell_size),
                            preset=np.array(env.preset), occupancy=env.occupancy,
                            signatures=env.signatures, objects=objs, landmarks=lms, rooms=rooms)


def load_environment(path) -> GridEnvironment:
    with np.load(Path(path)) as z:
        version, w, h, seed = (int(v) for v in z["header"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported environment format version {version}")
        rooms = z["rooms"]
        return GridEnvironment(
            width=w, height=h, cell_size=float(z["cell_size"]),
            occupancy=z["occupancy"].astype(bool), signatures=z["signatures"],
            objects=[((int(a), int(b)), int(c)) for a, b, c in z["objects"]],
            landmark_views=[Pose(int(a), int(b), int(c)) for a, b, c in z["landmarks"]],
            preset=str(z["preset"]), seed=seed,
            room_ids=rooms if rooms.size else None,
        )
