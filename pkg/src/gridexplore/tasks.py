"""Downstream evaluations: point-goal navigation, view localization, concept
reconstruction, difficult navigation episodes and landmark mining."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels as K
from .agents import get_action, process_map
from .mapping import FREE, OBSTACLE, OccupancyMap, PoseEstimate, register_scan, scan_cells
from .rewards import ConceptSpace, discover_concepts, true_concept_distribution
from .world import (N_HEADINGS, Action, GridEnvironment, Pose, Sensor, cast_rays, distance_field,
                    heading_angle, move, observe, snap, view_signature)

NAV_STEPS = {"small-cluttered": 200, "large-open": 500}
NAV_SUCCESS = {"small-cluttered": 0.5, "large-open": 0.25}
NAV_ONLINE = {"small-cluttered": False, "large-open": True}
# query grid: (spacing in cells, headings)
RECON_GRID = {"small-cluttered": (4, (0, 3, 6, 9)), "large-open": (8, (0, 4, 8))}


# ---------------------------------------------------------------------------
# navigation


@dataclass(frozen=True)
class NavEpisode:
    start: Pose
    goal: tuple
    T_nav: int = 200
    success_radius: float = 0.5


@dataclass
class NavResult:
    success: bool
    p: float   # path length travelled (m)
    l: float   # shortest path length (m)
    steps: int = 0


def pointnav_run(m: OccupancyMap, env: GridEnvironment, episode: NavEpisode, online_updates: bool,
                 origin: Pose, sensor: Sensor | None = None) -> NavResult:
    """Navigate start -> goal by replanning A* on the processed exploration map.

    The map is anchored at `origin` (the exploration start cell). Navigation uses the
    true pose. The agent stops once it stands on the goal cell; success is judged by the
    true geodesic distance to the goal at that moment.
    """
    sensor = sensor or Sensor()
    m = m.copy()
    ox0, oy0 = origin.x, origin.y

    def to_map(x, y):
        return x - ox0 + m.ox, y - oy0 + m.oy

    gx, gy = episode.goal
    geo = distance_field(env, episode.goal)
    l_steps = geo[episode.start.y, episode.start.x]
    if l_steps < 0:
        raise ValueError("goal unreachable from start")
    l = float(l_steps) * env.cell_size
    xs = [episode.start.x, gx]
    ys = [episode.start.y, gy]
    c0, r0 = to_map(min(xs), min(ys))
    c1, r1 = to_map(max(xs), max(ys))
    m.ensure(c0 - 2, r0 - 2, c1 + 2, r1 + 2)
    pose = episode.start
    trav = process_map(m)
    n_obst = int((m.states == OBSTACLE).sum())
    rng = np.random.default_rng([episode.start.x, episode.start.y, gx, gy])
    moved = 0
    for t in range(episode.T_nav):
        if (pose.x, pose.y) == (gx, gy):
            d = geo[pose.y, pose.x] * env.cell_size
            return NavResult(bool(d <= episode.success_radius + 1e-9), moved * env.cell_size, l, t)
        if online_updates:
            est = PoseEstimate((pose.x - ox0) * env.cell_size, (pose.y - oy0) * env.cell_size,
                               heading_angle(pose.heading, sensor.n_headings))
            register_scan(m, observe(env, pose, sensor), est, sensor)
            now = int((m.states == OBSTACLE).sum())
            if now != n_obst or trav.shape != m.states.shape:
                trav = process_map(m)
                n_obst = now
        cur = to_map(pose.x, pose.y)
        goal = to_map(gx, gy)
        path = K.astar(trav, cur[0], cur[1], goal[0], goal[1])
        if len(path) < 2:
            a = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)[int(rng.integers(3))]
        else:
            a = get_action(pose.heading, cur, tuple(path[1]), sensor.n_headings)
        new, _ = move(env, pose, a, sensor.n_headings)
        if (new.x, new.y) != (pose.x, pose.y):
            moved += 1
        pose = new
    ok = (pose.x, pose.y) == (gx, gy)
    d = geo[pose.y, pose.x] * env.cell_size
    return NavResult(bool(ok and d <= episode.success_radius + 1e-9), moved * env.cell_size, l,
                     episode.T_nav)


def ground_truth_map(env: GridEnvironment, origin: Pose) -> OccupancyMap:
    """Fully explored map of the environment anchored at origin's cell."""
    m = OccupancyMap(env.cell_size, 1)
    m.states = np.where(env.occupancy, OBSTACLE, FREE).astype(np.uint8)
    m.counts = np.ones(env.occupancy.shape, np.int32)
    m.ox, m.oy = origin.x, origin.y
    return m


def spl(results) -> float:
    """Mean over episodes of success * l / max(p, l)."""
    results = list(results)
    if not results:
        return 0.0
    acc = 0.0
    for r in results:
        if r.success:
            acc += r.l / max(r.p, r.l) if max(r.p, r.l) > 0 else 1.0
    return acc / len(results)


def naive_path_length(env: GridEnvironment, start, goal, sensor: Sensor | None = None,
                      max_steps: int | None = None) -> int:
    """Moves taken by a walker that plans on an all-free map and only learns the obstacles
    its forward sensor sees while facing the direction of travel. -1 if it gives up."""
    sensor = sensor or Sensor()
    H = sensor.n_headings
    known = np.zeros(env.occupancy.shape, bool)
    x, y = start
    moves = 0
    max_steps = max_steps or 4 * env.width * env.height
    while (x, y) != tuple(goal) and moves < max_steps:
        p = K.astar(~known, x, y, goal[0], goal[1])
        if len(p) < 2:
            return -1
        nx, ny = int(p[1][0]), int(p[1][1])
        k = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}[(nx - x, ny - y)]
        res = cast_rays(env.occupancy, x, y, k * H // 4, sensor, env.cell_size)
        rows = np.nonzero(res.first >= 0)[0]
        fi = res.first[rows]
        bx, by = res.cells_x[rows, fi], res.cells_y[rows, fi]
        inb = (bx >= 0) & (by >= 0) & (bx < env.width) & (by < env.height)
        known[by[inb], bx[inb]] = True
        if known[ny, nx]:
            continue
        x, y = nx, ny
        moves += 1
    return moves if (x, y) == tuple(goal) else -1


def generate_difficult_nav_episodes(env: GridEnvironment, n: int, detour_threshold: float = 1.5,
                                    seed: int = 0, start: Pose | None = None, T_nav: int = 200,
                                    success_radius: float = 0.5, min_distance: int = 4,
                                    max_tries: int | None = None, sensor: Sensor | None = None):
    """Sample (start, goal) pairs where the naive walker's path is at least
    detour_threshold times the shortest path. Returns (episodes, shortfall)."""
    rng = np.random.default_rng([seed, env.seed, 7])
    free = env.free_cells()
    out = []
    seen = set()
    max_tries = max_tries or 40 * n
    for _ in range(max_tries):
        if len(out) >= n:
            break
        if start is None:
            sx, sy = free[rng.integers(len(free))]
            s = Pose(int(sx), int(sy), int(rng.integers(N_HEADINGS)))
        else:
            s = start
        gx, gy = (int(v) for v in free[rng.integers(len(free))])
        if (s.x, s.y, gx, gy) in seen:
            continue
        seen.add((s.x, s.y, gx, gy))
        d = distance_field(env, (gx, gy))[s.y, s.x]
        if d < min_distance:
            continue
        naive = naive_path_length(env, (s.x, s.y), (gx, gy), sensor)
        if naive < 0 or naive / d < detour_threshold:
            continue
        out.append(NavEpisode(s, (gx, gy), T_nav, success_radius))
    short = n - len(out)
    if short > 0:
        warnings.warn(f"only {len(out)} of {n} difficult episodes found")
    return out, short


# ---------------------------------------------------------------------------
# view localization


@dataclass
class EpisodicMemory:
    signatures: list = field(default_factory=list)
    poses: list = field(default_factory=list)        # PoseEstimate per step
    depths: list = field(default_factory=list)       # center-ray depth (m)
    true_poses: list = field(default_factory=list)   # held by the evaluator only

    def add(self, signature, est: PoseEstimate, depth: float, true_pose=None):
        self.signatures.append(np.asarray(signature, float))
        self.poses.append(est)
        self.depths.append(float(depth))
        self.true_poses.append(true_pose)

    def __len__(self):
        return len(self.signatures)


@dataclass
class LocalizationQuery:
    signature: np.ndarray
    depth: float
    true_xy: tuple          # meters, in the exploration map frame
    heading: float = 0.0    # true heading (rad), used only by the reference estimator


class NoisyPoseEstimator:
    """Pairwise pose estimator: exact (d_i, d_j, beta) plus Gaussian noise."""

    def __init__(self, sigma_d: float = 0.2, sigma_beta_deg: float = 5.0, rng=None):
        self.sigma_d = sigma_d
        self.sigma_b = math.radians(sigma_beta_deg)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __call__(self, memory: EpisodicMemory, i: int, query: LocalizationQuery):
        d_i = memory.depths[i]
        d_j = query.depth
        true_theta = memory.true_poses[i][2] if memory.true_poses[i] is not None else memory.poses[i].theta
        beta = query.heading - true_theta
        if self.sigma_d > 0 or self.sigma_b > 0:
            d_i += self.rng.normal(0, self.sigma_d)
            d_j += self.rng.normal(0, self.sigma_d)
            beta += self.rng.normal(0, self.sigma_b)
        return d_i, d_j, beta


def relative_pose(d_i: float, d_j: float, beta: float) -> tuple[float, float, float]:
    """Query pose in the retrieved view's frame when both look at the same point."""
    return d_i - d_j * math.cos(beta), -d_j * math.sin(beta), beta


def compose(est: PoseEstimate, dp) -> tuple[float, float]:
    c, s = float(snap(math.cos(est.theta))), float(snap(math.sin(est.theta)))
    return est.x + c * dp[0] - s * dp[1], est.y + s * dp[0] + c * dp[1]


def ransac_centroid(cands: np.ndarray, rng=None, iters: int = 100, radius: float = 0.5,
                    min_inliers: int = 2):
    """Consensus position among candidate points; None if no set reaches min_inliers."""
    cands = np.asarray(cands, float).reshape(-1, 2)
    n = len(cands)
    if n == 0:
        return None
    if n <= iters:
        hyps = range(n)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        hyps = rng.integers(n, size=iters)
    best, best_set = 0, None
    for h in hyps:
        inl = np.hypot(*(cands - cands[h]).T) <= radius
        k = int(inl.sum())
        if k > best:
            best, best_set = k, inl
    if best < min_inliers:
        return None
    return tuple(cands[best_set].mean(axis=0))


def localize_view(memory: EpisodicMemory, query: LocalizationQuery, estimator, K_top: int = 5,
                  threshold: float = 0.95, iters: int = 100, radius: float = 0.5,
                  min_inliers: int = 2, rng=None):
    """Predicted (x, y) of the query in the map frame, or None when unlocalized.

    With fewer than min_inliers agreeing candidates the best-scoring retrieval's
    estimate is returned instead.
    """
    if len(memory) == 0:
        raise ValueError("empty memory")
    S = np.array(memory.signatures)
    q = np.asarray(query.signature, float)
    denom = np.linalg.norm(S, axis=1) * np.linalg.norm(q)
    sim = np.where(denom > 0, S @ q / np.where(denom > 0, denom, 1.0), 0.0)
    sim = ndimage.median_filter(sim, size=3, mode="nearest")
    order = np.lexsort((np.arange(len(sim)), -sim))
    top = [int(i) for i in order[:K_top] if sim[i] >= threshold]
    if not top:
        return None
    cands = []
    for i in top:
        dp = relative_pose(*estimator(memory, i, query))
        cands.append(compose(memory.poses[i], dp))
    cands = np.array(cands)
    got = ransac_centroid(cands, rng, iters, radius, min_inliers)
    if got is None:
        return tuple(cands[0])
    return got


def psr_at_k(predictions, truths, k_meters: float = 1.0) -> float:
    """Fraction of predictions within k_meters; None counts as a miss."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align")
    if not predictions:
        return 0.0
    ok = 0
    for p, t in zip(predictions, truths):
        if p is not None and math.hypot(p[0] - t[0], p[1] - t[1]) < k_meters:
            ok += 1
    return ok / len(predictions)


# ---------------------------------------------------------------------------
# reconstruction


def recon_query_poses(env: GridEnvironment, spacing: int, headings) -> list[Pose]:
    """Free cells on a regular lattice, each with every listed heading."""
    off = spacing // 2
    out = []
    for y in range(off, env.height, spacing):
        for x in range(off, env.width, spacing):
            if not env.occupancy[y, x]:
                out.extend(Pose(x, y, h) for h in headings)
    return out


def recon_true_distributions(env, queries, space: ConceptSpace, J: int = 3, sensor=None) -> np.ndarray:
    return np.array([true_concept_distribution(view_signature(env, q, sensor), space, J)
                     for q in queries]).reshape(len(queries), space.K)


class ConceptPredictor:
    """Predicts the concept distribution seen from query poses using only what the agent
    has observed: the believed map and the concepts of surfaces its rays struck."""

    def __init__(self, space: ConceptSpace, queries_map, sensor: Sensor | None = None,
                 smoothing: float = 0.01):
        self.space = space
        self.sensor = sensor or Sensor()
        # queries as array of (mx, my, heading) in map coordinates
        self.q = np.asarray(queries_map, np.int64).reshape(-1, 3)
        self.eps = smoothing
        self.memory: dict = {}

    def observe(self, m: OccupancyMap, est: PoseEstimate, obs) -> None:
        if obs is None or obs.hit_signatures is None or not obs.hit.any():
            return
        _, _, hx, hy = scan_cells(obs.depth, obs.hit, est, self.sensor, m.cell_size)
        concepts = self.space.assign(obs.hit_signatures[obs.hit])
        for x, y, c in zip(hx.tolist(), hy.tolist(), concepts.tolist()):
            self.memory[(x, y)] = c

    def predict(self, m: OccupancyMap) -> np.ndarray:
        Kc = self.space.K
        Q = len(self.q)
        out = np.full((Q, Kc), 1.0 / Kc)
        if Q == 0:
            return out
        h, w = m.states.shape
        cid = np.full((h, w), -1, np.int64)
        for (x, y), c in self.memory.items():
            r, col = y + m.oy, x + m.ox
            if 0 <= r < h and 0 <= col < w:
                cid[r, col] = c
        tab = self.sensor.table()
        hq = self.q[:, 2] % self.sensor.n_headings
        X = self.q[:, 0, None, None] + m.ox + tab.dx[hq]
        Y = self.q[:, 1, None, None] + m.oy + tab.dy[hq]
        valid = tab.valid[hq]
        inb = (X >= 0) & (X < w) & (Y >= 0) & (Y < h) & valid
        st = np.zeros(X.shape, np.uint8)
        st[inb] = m.states[Y[inb], X[inb]]
        R, L = X.shape[1], X.shape[2]
        stop = (st == OBSTACLE)
        first = K.first_true(stop.reshape(Q * R, L)).reshape(Q, R)
        qi, ri = np.nonzero(first >= 0)
        fi = first[qi, ri]
        c = cid[Y[qi, ri, fi], X[qi, ri, fi]]
        dist = 0.5 * (tab.t_enter[hq[qi], ri, fi] + tab.t_exit[hq[qi], ri, fi])
        keep = c >= 0
        hist = np.zeros((Q, Kc))
        np.add.at(hist, (qi[keep], c[keep]), 1.0 / np.maximum(dist[keep], 0.5))
        tot = hist.sum(axis=1)
        seen = tot > 0
        p = hist[seen] / tot[seen, None]
        out[seen] = (1 - self.eps) * p + self.eps / Kc
        return out


def reconstruct_concepts(predictor: ConceptPredictor, m: OccupancyMap) -> np.ndarray:
    return predictor.predict(m)


def precision_at_k(pred, true, k: int = 2) -> float:
    """Share of the k highest predicted concepts that lie in the true support."""
    pred = np.asarray(pred, float)
    true = np.asarray(true, float)
    if not 1 <= k <= len(pred):
        raise ValueError("need 1 <= k <= K")
    top = np.lexsort((np.arange(len(pred)), -pred))[:k]
    return float((true[top] > 0).sum()) / k


# ---------------------------------------------------------------------------
# landmarks


def mine_landmarks(envs, K: int = 12, variance_threshold: float = 0.5, seed: int = 0,
                   n_views: int = 400, sensor: Sensor | None = None, min_members: int = 2):
    """Views whose appearance cluster is spatially tight (positional variance in m^2
    below the threshold). Returns one list of Pose per environment."""
    sensor = sensor or Sensor()
    out = []
    for e_i, env in enumerate(envs):
        rng = np.random.default_rng([seed, env.seed, e_i])
        free = env.free_cells()
        n = max(n_views, K)
        idx = rng.integers(len(free), size=n)
        heads = rng.integers(sensor.n_headings, size=n)
        poses = [Pose(int(free[i][0]), int(free[i][1]), int(h)) for i, h in zip(idx, heads)]
        sigs = np.array([view_signature(env, p, sensor) for p in poses])
        space = discover_concepts(sigs, K, seed=seed)
        lab = space.assign(sigs)
        pos = np.array([[p.x, p.y] for p in poses], float) * env.cell_size
        kept = []
        for k in range(K):
            mem = np.nonzero(lab == k)[0]
            if len(mem) < min_members:
                continue
            var = ((pos[mem] - pos[mem].mean(axis=0)) ** 2).sum(axis=1).mean()
            if var < variance_threshold:
                kept.extend(mem.tolist())
        views = list(dict.fromkeys(poses[i] for i in kept))
        if not views:
            warnings.warn(f"no landmark clusters in environment {env.seed}")
        out.append(views)
    return out
