"""Agent-side spatial memory: point projection, cell classification, scan registration,
odometry noise and egocentric crops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import N_HEADINGS, Action, Sensor, snap

UNEXPLORED = 0
FREE = 1
OBSTACLE = 2

_SAMPLE_STEP = 0.25  # in cells, along each ray


# ---------------------------------------------------------------------------
# 3D projection and height classification


@dataclass(frozen=True)
class CameraIntrinsics:
    K: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.shape != (3, 3):
            raise ValueError("intrinsic matrix must be 3x3")
        if abs(np.linalg.det(K)) < 1e-12 or np.linalg.cond(K) > 1e12:
            raise ValueError("intrinsic matrix is singular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "K", K)

    @classmethod
    def pinhole(cls, f: float, cx: float, cy: float) -> "CameraIntrinsics":
        return cls(np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]]))


def project_depth_to_points(depth: np.ndarray, intrinsics, R=None, t=None) -> np.ndarray:
    """Back-project a depth image into world points.

    Pixel (u, v) = (column, row). Pixels with non-positive or non-finite depth are skipped.
    """
    if not isinstance(intrinsics, CameraIntrinsics):
        intrinsics = CameraIntrinsics(np.asarray(intrinsics))
    depth = np.asarray(depth, dtype=float)
    R = np.eye(3) if R is None else np.asarray(R, dtype=float)
    t = np.zeros(3) if t is None else np.asarray(t, dtype=float)
    v, u = np.nonzero(np.isfinite(depth) & (depth > 0))
    d = depth[v, u]
    pix = np.stack([u, v, np.ones_like(u)], axis=0).astype(float)
    cam = np.linalg.solve(intrinsics.K, pix) * d
    return (R @ cam).T + t


def classify_cells(points: np.ndarray, s: float, eta_l: float, eta_h: float, bounds=None):
    """Label ground-plane cells from 3D points (z is height).

    Only points below eta_h count. A cell is an obstacle if any counted point reaches
    eta_l, free if all counted points are lower, unexplored if it has none.
    Returns (labels, (x0, y0)) where labels[i, j] is cell (x0 + j, y0 + i).
    """
    if s <= 0:
        raise ValueError("bin size must be positive")
    if not eta_l < eta_h:
        raise ValueError("need eta_l < eta_h")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cx = np.floor(pts[:, 0] / s + 0.5).astype(np.int64)
    cy = np.floor(pts[:, 1] / s + 0.5).astype(np.int64)
    if bounds is None:
        if len(pts) == 0:
            return np.zeros((0, 0), np.uint8), (0, 0)
        x0, y0, x1, y1 = cx.min(), cy.min(), cx.max(), cy.max()
    else:
        x0, y0, x1, y1 = bounds
    labels = np.full((y1 - y0 + 1, x1 - x0 + 1), UNEXPLORED, np.uint8)
    z = pts[:, 2]
    keep = (z < eta_h) & (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
    r, c = cy[keep] - y0, cx[keep] - x0
    labels[r, c] = FREE
    tall = z[keep] >= eta_l
    labels[r[tall], c[tall]] = OBSTACLE
    return labels, (int(x0), int(y0))


# ---------------------------------------------------------------------------
# odometry


@dataclass(frozen=True)
class OdometryNoiseModel:
    """Truncated Gaussian perturbation with sd eta*delta, clipped to +-eta*delta."""

    eta: float = 0.0
    forward: float = 0.25
    rotation: float = 2 * math.pi / N_HEADINGS

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("noise level must be non-negative")

    def sample(self, action, rng) -> np.ndarray:
        return sample_odometry_noise(self, action, rng)


def truncated_normal(rng, sd: float, size) -> np.ndarray:
    """Normal(0, sd) restricted to [-sd, sd] by rejection."""
    if sd == 0:
        return np.zeros(size)
    z = rng.standard_normal(size)
    bad = np.abs(z) > 1
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 1
    return z * sd


def sample_odometry_noise(model: OdometryNoiseModel, action, rng) -> np.ndarray:
    """Perturbation (dx, dy, dtheta) for one action."""
    out = np.zeros(3)
    if model.eta == 0:
        return out
    action = Action(action)
    if action == Action.FORWARD:
        out[:2] = truncated_normal(rng, model.eta * model.forward, 2)
    elif action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        out[2] = truncated_normal(rng, model.eta * model.rotation, 1)[0]
    return out


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


@dataclass(frozen=True)
class PoseEstimate:
    """Dead-reckoned pose. x, y in meters from the start cell centre, theta absolute."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0


def integrate_odometry(est: PoseEstimate, reading) -> PoseEstimate:
    bx, by, dth = (float(v) for v in reading)
    c, s = float(snap(math.cos(est.theta))), float(snap(math.sin(est.theta)))
    return PoseEstimate(est.x + c * bx - s * by, est.y + s * bx + c * by,
                        wrap_angle(est.theta + dth))


# ---------------------------------------------------------------------------
# occupancy map


class OccupancyMap:
    """Three-state grid anchored at the start cell, growing on demand.

    Map cell (mx, my) sits at array index [oy + my, ox + mx].
    """

    def __init__(self, cell_size: float = 0.25, size_hint: int = 16):
        n = 2 * max(int(size_hint), 1) + 1
        self.cell_size = float(cell_size)
        self.states = np.zeros((n, n), np.uint8)
        self.counts = np.zeros((n, n), np.int32)
        self.ox = self.oy = n // 2

    @property
    def shape(self):
        return self.states.shape

    def copy(self) -> "OccupancyMap":
        m = OccupancyMap.__new__(OccupancyMap)
        m.cell_size = self.cell_size
        m.states = self.states.copy()
        m.counts = self.counts.copy()
        m.ox, m.oy = self.ox, self.oy
        return m

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Map cell containing a metric point."""
        s = self.cell_size
        return int(math.floor(x / s + 0.5)), int(math.floor(y / s + 0.5))

    def index_of(self, est: PoseEstimate) -> tuple[int, int]:
        """Array (col, row) of the cell containing the estimate."""
        mx, my = self.cell_of(est.x, est.y)
        return mx + self.ox, my + self.oy

    def ensure(self, x0: int, y0: int, x1: int, y1: int) -> None:
        """Grow so array indices [y0..y1] x [x0..x1] are inside."""
        h, w = self.states.shape
        left, bottom = max(0, -x0), max(0, -y0)
        right, top = max(0, x1 - (w - 1)), max(0, y1 - (h - 1))
        if not (left or bottom or right or top):
            return
        grow = max(8, h // 4)
        left, bottom = (left + grow if left else 0), (bottom + grow if bottom else 0)
        right, top = (right + grow if right else 0), (top + grow if top else 0)
        pad = ((bottom, top), (left, right))
        self.states = np.pad(self.states, pad)
        self.counts = np.pad(self.counts, pad)
        self.ox += left
        self.oy += bottom

    def state_at(self, mx: int, my: int) -> int:
        r, c = my + self.oy, mx + self.ox
        if 0 <= r < self.states.shape[0] and 0 <= c < self.states.shape[1]:
            return int(self.states[r, c])
        return UNEXPLORED

    def explored_count(self) -> int:
        return int(np.count_nonzero(self.states))

    def explored_area(self) -> float:
        return self.explored_count() * self.cell_size ** 2

    def explored_bbox(self, margin: int = 0):
        """(c0, r0, c1, r1) inclusive array bounds of explored cells, padded and clipped."""
        rows = np.flatnonzero(self.states.any(axis=1))
        cols = np.flatnonzero(self.states.any(axis=0))
        h, w = self.states.shape
        if len(rows) == 0:
            return (max(self.ox - margin, 0), max(self.oy - margin, 0),
                    min(self.ox + margin, w - 1), min(self.oy + margin, h - 1))
        return (max(cols[0] - margin, 0), max(rows[0] - margin, 0),
                min(cols[-1] + margin, w - 1), min(rows[-1] + margin, h - 1))


def scan_cells(obs_depth, obs_hit, est: PoseEstimate, sensor: Sensor, cell_size: float):
    """Free-sample cells and hit endpoint cells (map coordinates) for one scan."""
    bearings = est.theta + sensor.offsets()
    c, s = snap(np.cos(bearings)), snap(np.sin(bearings))
    depth_cells = np.asarray(obs_depth) / cell_size
    n = int(math.ceil(sensor.max_range / _SAMPLE_STEP)) + 1
    t = np.arange(n) * _SAMPLE_STEP
    keep = t[None, :] < depth_cells[:, None]
    px = est.x / cell_size + c[:, None] * t[None, :]
    py = est.y / cell_size + s[:, None] * t[None, :]
    fx = np.floor(px[keep] + 0.5).astype(np.int64)
    fy = np.floor(py[keep] + 0.5).astype(np.int64)
    hit = np.asarray(obs_hit, bool)
    hx = np.floor(est.x / cell_size + c[hit] * depth_cells[hit] + 0.5).astype(np.int64)
    hy = np.floor(est.y / cell_size + s[hit] * depth_cells[hit] + 0.5).astype(np.int64)
    return fx, fy, hx, hy


def register_scan(m: OccupancyMap, obs, est: PoseEstimate, sensor: Sensor | None = None,
                  rng=None, p_flip: float = 0.0) -> np.ndarray:
    """Write one depth scan into the map. Returns array (row, col) indices of touched cells.

    Samples along each ray become free and hit endpoints become obstacles (obstacle wins
    inside a scan, the newest scan wins across scans). Each touched cell's count rises by 1.
    With p_flip > 0 each touched label is flipped independently with that probability.
    """
    sensor = sensor or Sensor()
    fx, fy, hx, hy = scan_cells(obs.depth, obs.hit, est, sensor, m.cell_size)
    allx = np.concatenate([fx, hx])
    ally = np.concatenate([fy, hy])
    if len(allx) == 0:
        return np.zeros((0, 2), np.int64)
    m.ensure(allx.min() + m.ox, ally.min() + m.oy, allx.max() + m.ox, ally.max() + m.oy)
    w = m.states.shape[1]
    free_flat = np.unique((fy + m.oy) * w + fx + m.ox)
    hit_flat = np.unique((hy + m.oy) * w + hx + m.ox)
    touched = np.union1d(free_flat, hit_flat)
    labels = np.full(len(touched), FREE, np.uint8)
    labels[np.isin(touched, hit_flat, assume_unique=True)] = OBSTACLE
    if p_flip > 0:
        flip = rng.random(len(touched)) < p_flip
        labels[flip] = np.where(labels[flip] == FREE, OBSTACLE, FREE)
    st = m.states.reshape(-1)
    ct = m.counts.reshape(-1)
    st[touched] = labels
    ct[touched] += 1
    return np.stack([touched // w, touched % w], axis=1)


# ---------------------------------------------------------------------------
# egocentric crops


def _round_sym(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def crop_states(states: np.ndarray, col: float, row: float, theta: float, n: int) -> np.ndarray:
    """n x n nearest-neighbour crop around fractional array position (col, row).

    Output row 0 is the far forward edge; columns run left to right of the agent.
    """
    cc = (n - 1) / 2.0
    i = np.arange(n)
    fwd = (cc - i)[:, None] * np.ones(n)[None, :]
    right = np.ones(n)[:, None] * (i - cc)[None, :]
    c, s = float(snap(math.cos(theta))), float(snap(math.sin(theta)))
    # right-hand vector of heading (c, s) is (s, -c)
    ox = fwd * c + right * s
    oy = fwd * s - right * c
    ac, ar = int(math.floor(col + 0.5)), int(math.floor(row + 0.5))
    X = (ac + _round_sym(ox + (col - ac))).astype(np.int64)
    Y = (ar + _round_sym(oy + (row - ar))).astype(np.int64)
    h, w = states.shape
    inb = (X >= 0) & (X < w) & (Y >= 0) & (Y < h)
    out = np.full((n, n), UNEXPLORED, states.dtype)
    out[inb] = states[Y[inb], X[inb]]
    return out


def egocentric_crop(m: OccupancyMap, est: PoseEstimate, size_meters: float) -> np.ndarray:
    """Square crop of side size_meters, forward pointing up, unexplored outside the map."""
    if size_meters <= 0:
        raise ValueError("crop size must be positive")
    n = max(1, int(round(size_meters / m.cell_size)))
    col = est.x / m.cell_size + m.ox
    row = est.y / m.cell_size + m.oy
    return crop_states(m.states, col, row, est.theta, n)


# crop sides in meters per preset: (coarse, fine)
CROP_SIZES = {"small-cluttered": (10.0, 3.0), "large-open": (20.0, 4.0)}
# height thresholds (eta_l, eta_h) per preset
HEIGHT_THRESHOLDS = {"small-cluttered": (0.3, 1.8), "large-open": (0.5, 2.0)}
