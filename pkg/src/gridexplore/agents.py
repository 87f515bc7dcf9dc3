"""Exploration policies: heuristics, frontier exploration, ground-truth oracles and
greedy planners that chase each reward paradigm."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels as K
from .mapping import FREE, OBSTACLE, UNEXPLORED, OccupancyMap, PoseEstimate, crop_states
from .rewards import PATCH, curiosity_features
from .world import (CARDINAL_STEPS, EXPLORATION_ACTIONS, N_HEADINGS, Action, GridEnvironment,
                    Pose, Sensor, cardinal_bucket, ray_table)

AGENT_NAMES = (
    "random", "forward", "forward+", "frontier",
    "oracle-random", "oracle-landmarks", "oracle-objects",
    "greedy-novelty", "greedy-coverage", "greedy-smooth-coverage",
    "greedy-curiosity", "greedy-reconstruction",
)
ORACLES = ("oracle-random", "oracle-landmarks", "oracle-objects")
PLAN_MARGIN = 2

_STRUCT8 = np.ones((3, 3), bool)


def _buckets(n_headings: int) -> np.ndarray:
    return np.array([cardinal_bucket(h, n_headings) for h in range(n_headings)], np.int64)


@dataclass
class StepContext:
    """What an agent may look at when choosing the next action.

    pose and env are ground truth and only oracles read them.
    """

    t: int
    obs: object
    map: OccupancyMap
    est: PoseEstimate
    rng: np.random.Generator
    pose: Pose | None = None
    env: GridEnvironment | None = None
    reward_state: object = None


# ---------------------------------------------------------------------------
# map processing and planning


def process_map(m) -> np.ndarray:
    """Traversable mask: free and unexplored pass, obstacles block, then the blocked set
    is closed with a 3x3 element so one- and two-cell gaps in walls are sealed."""
    states = m.states if isinstance(m, OccupancyMap) else np.asarray(m)
    blocked = states == OBSTACLE
    pad = np.pad(blocked, 1, constant_values=False)
    closed = ndimage.binary_closing(pad, structure=_STRUCT8)[1:-1, 1:-1]
    return ~closed


@dataclass
class Frontier:
    cells: np.ndarray  # (n, 2) array of (col, row)

    @property
    def length(self) -> int:
        return len(self.cells)


def frontier_mask(states: np.ndarray) -> np.ndarray:
    """Free cells with at least one 4-neighbour unexplored (outside counts as unexplored)."""
    unexp = np.pad(states == UNEXPLORED, 1, constant_values=True)
    near = unexp[:-2, 1:-1] | unexp[2:, 1:-1] | unexp[1:-1, :-2] | unexp[1:-1, 2:]
    return (states == FREE) & near


def detect_frontiers(m) -> list[Frontier]:
    """8-connected groups of frontier cells, longest first (label order on ties)."""
    states = m.states if isinstance(m, OccupancyMap) else np.asarray(m)
    lab, n = ndimage.label(frontier_mask(states), structure=_STRUCT8)
    if n == 0:
        return []
    flat = lab.ravel()
    order = np.argsort(flat, kind="stable")
    sizes = np.bincount(flat, minlength=n + 1)
    starts = np.cumsum(sizes) - sizes
    w = states.shape[1]
    out = []
    for k in range(1, n + 1):
        idx = order[starts[k]:starts[k] + sizes[k]]
        out.append(Frontier(np.stack([idx % w, idx // w], axis=1)))
    out.sort(key=lambda f: -f.length)
    return out


def heading_index(theta: float, n_headings: int = N_HEADINGS) -> int:
    return int(round(theta / (2 * math.pi / n_headings))) % n_headings


def get_action(heading: int, cur, waypoint, n_headings: int = N_HEADINGS) -> Action:
    """Forward if the heading already points at the waypoint's side, else turn the short way."""
    dx, dy = waypoint[0] - cur[0], waypoint[1] - cur[1]
    if abs(dx) >= abs(dy):
        want = 0 if dx > 0 else 2
    else:
        want = 1 if dy > 0 else 3
    if cardinal_bucket(heading, n_headings) == want:
        return Action.FORWARD
    best = None
    for h in range(n_headings):
        if cardinal_bucket(h, n_headings) != want:
            continue
        d = (h - heading + n_headings // 2) % n_headings - n_headings // 2
        key = (abs(d), d < 0)
        if best is None or key < best[0]:
            best = (key, d)
    d = best[1]
    if d == -(n_headings // 2) or d > 0:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT


class Planner:
    """Plans on a processed window of the map around the explored area."""

    def __init__(self, m: OccupancyMap, margin: int = PLAN_MARGIN):
        c0, r0, c1, r1 = m.explored_bbox(margin)
        self.c0, self.r0 = c0, r0
        self.m = m
        self.states = m.states[r0:r1 + 1, c0:c1 + 1]
        self.trav = process_map(self.states)

    def local(self, col, row):
        return col - self.c0, row - self.r0

    def inside(self, col, row) -> bool:
        x, y = self.local(col, row)
        return 0 <= x < self.trav.shape[1] and 0 <= y < self.trav.shape[0]

    def path(self, start, goal):
        """A* between array cells; list of array (col, row) or None."""
        if not (self.inside(*start) and self.inside(*goal)):
            return None
        sx, sy = self.local(*start)
        gx, gy = self.local(*goal)
        p = K.astar(self.trav, sx, sy, gx, gy)
        if len(p) == 0:
            return None
        return [(int(x) + self.c0, int(y) + self.r0) for x, y in p]

    def distances(self, start) -> np.ndarray:
        if not self.inside(*start):
            return np.full(self.trav.shape, -1, np.int64)
        sx, sy = self.local(*start)
        return K.bfs_distances(self.trav, sx, sy)

    def action_costs(self, start, heading: int, n_headings: int = N_HEADINGS) -> np.ndarray:
        """Fewest actions, rotations included, to reach each cell; -1 if unreachable."""
        if not self.inside(*start):
            return np.full(self.trav.shape, -1, np.int64)
        sx, sy = self.local(*start)
        return K.action_distances(self.trav, sx, sy, heading, n_headings, _buckets(n_headings))


# ---------------------------------------------------------------------------
# agents


class Agent:
    name = "agent"

    def reset(self, env: GridEnvironment, spec, sensor: Sensor, preset: str, rng) -> None:
        self.sensor = sensor
        self.n_headings = sensor.n_headings
        self.preset = preset

    def act(self, ctx: StepContext) -> Action:
        raise NotImplementedError

    def random_action(self, rng) -> Action:
        return EXPLORATION_ACTIONS[int(rng.integers(3))]


class HeuristicAgent(Agent):
    def __init__(self, kind: str = "random"):
        if kind not in ("random", "forward", "forward+"):
            raise ValueError(f"unknown heuristic {kind!r}")
        self.kind = kind
        self.name = kind

    def act(self, ctx: StepContext) -> Action:
        return heuristic_action(self.kind, ctx.obs, ctx.rng)


def heuristic_action(kind: str, obs, rng) -> Action:
    if kind == "random":
        return EXPLORATION_ACTIONS[int(rng.integers(3))]
    if kind == "forward":
        return Action.FORWARD
    if kind == "forward+":
        return Action.TURN_LEFT if obs is not None and obs.collision else Action.FORWARD
    raise ValueError(f"unknown heuristic {kind!r}")


@dataclass
class FrontierState:
    target: tuple | None = None   # map coordinates (relative to the origin)
    failure_count: int = 0
    time_spent: int = 0
    N_fail: int = 2
    T_max: int = 20


FRONTIER_TMAX = {"small-cluttered": 20, "large-open": 200}


class FrontierAgent(Agent):
    name = "frontier"

    def __init__(self, N_fail: int = 2, T_max: int | None = None, reach: int = 1):
        self.N_fail = N_fail
        self.T_max = T_max
        self.reach = reach

    def reset(self, env, spec, sensor, preset, rng):
        super().reset(env, spec, sensor, preset, rng)
        tmax = self.T_max if self.T_max is not None else FRONTIER_TMAX.get(preset, 20)
        self.state = FrontierState(N_fail=self.N_fail, T_max=tmax)

    def act(self, ctx: StepContext) -> Action:
        return frontier_agent_step(self.state, ctx.map, ctx.est, ctx.rng, self.n_headings, self.reach)


def sample_frontier_target(frontiers: list[Frontier], rng):
    top = frontiers[:3]
    f = top[int(rng.integers(len(top)))]
    c = f.cells[int(rng.integers(f.length))]
    return int(c[0]), int(c[1])


def frontier_agent_step(state: FrontierState, m: OccupancyMap, est: PoseEstimate, rng,
                        n_headings: int = N_HEADINGS, reach: int = 1) -> Action:
    cur = m.index_of(est)
    need = state.target is None or state.failure_count > state.N_fail or state.time_spent > state.T_max
    if not need:
        tc, tr = state.target[0] + m.ox, state.target[1] + m.oy
        need = max(abs(tc - cur[0]), abs(tr - cur[1])) <= reach
    if need:
        frontiers = detect_frontiers(m)
        state.failure_count = 0
        state.time_spent = 0
        if not frontiers:
            state.target = None
            return EXPLORATION_ACTIONS[int(rng.integers(3))]
        c, r = sample_frontier_target(frontiers, rng)
        state.target = (c - m.ox, r - m.oy)
    state.time_spent += 1
    goal = (state.target[0] + m.ox, state.target[1] + m.oy)
    path = Planner(m).path(cur, goal)
    if path is None:
        state.failure_count += 1
        return EXPLORATION_ACTIONS[int(rng.integers(3))]
    if len(path) < 2:
        return EXPLORATION_ACTIONS[int(rng.integers(3))]
    return get_action(heading_index(est.theta, n_headings), cur, path[1], n_headings)


# ---------------------------------------------------------------------------
# oracles


class OracleAgent(Agent):
    """Walks true shortest paths through ground-truth targets in shuffled order."""

    def __init__(self, variant: str = "random"):
        if variant not in ("random", "landmarks", "objects"):
            raise ValueError(f"unknown oracle variant {variant!r}")
        self.variant = variant
        self.name = f"oracle-{variant}"

    def reset(self, env, spec, sensor, preset, rng):
        super().reset(env, spec, sensor, preset, rng)
        self.env = env
        self.targets = oracle_targets(env, self.variant, sensor.n_headings)
        if not self.targets:
            self.targets = oracle_targets(env, "random", sensor.n_headings)
        self.queue = []
        self.path = None
        self.goal = None

    def _next_target(self, rng):
        if not self.queue:
            self.queue = [self.targets[i] for i in rng.permutation(len(self.targets))]
        return self.queue.pop()

    def act(self, ctx: StepContext) -> Action:
        return oracle_explore_step(self, ctx.env, ctx.pose, ctx.rng)


def oracle_targets(env: GridEnvironment, variant: str, n_headings: int = N_HEADINGS) -> list:
    """Targets as ((x, y), heading or None)."""
    if variant == "random":
        return [((int(x), int(y)), None) for x, y in env.free_cells()]
    if variant == "landmarks":
        return [((p.x, p.y), p.heading) for p in env.landmark_views]
    out = []
    for (ox, oy), _ in env.objects:
        for k, (dx, dy) in enumerate(CARDINAL_STEPS):
            # stand on the neighbour and face back toward the object
            nx, ny = ox - dx, oy - dy
            if env.is_free(nx, ny):
                out.append(((nx, ny), k * n_headings // 4))
    return out


def oracle_explore_step(agent: OracleAgent, env: GridEnvironment, pose: Pose, rng) -> Action:
    H = agent.n_headings
    for _ in range(len(agent.targets) + 2):
        if agent.goal is None:
            agent.goal = agent._next_target(rng)
            p = K.astar(~env.occupancy, pose.x, pose.y, agent.goal[0][0], agent.goal[0][1])
            agent.path = [(int(x), int(y)) for x, y in p]
        cell, heading = agent.goal
        if (pose.x, pose.y) == cell:
            if heading is not None and pose.heading != heading:
                d = (heading - pose.heading + H // 2) % H - H // 2
                return Action.TURN_LEFT if d > 0 or d == -(H // 2) else Action.TURN_RIGHT
            agent.goal = None
            continue
        if not agent.path:
            agent.goal = None
            continue
        i = agent.path.index((pose.x, pose.y))
        return get_action(pose.heading, (pose.x, pose.y), agent.path[i + 1], H)
    return Action.TURN_LEFT


# ---------------------------------------------------------------------------
# greedy paradigm planners


def argmax_lowest(scores: np.ndarray, rel_tol: float = 1e-9) -> int:
    """Index of the maximum; near-ties (relative rel_tol) go to the lowest index."""
    best = scores.max()
    tied = scores >= best - rel_tol * abs(best)
    return int(np.argmax(tied))


class GreedyAgent(Agent):
    """Navigates to the candidate cell with the best reward gain per step of path cost."""

    PARADIGMS = ("novelty", "coverage", "smooth-coverage", "curiosity", "reconstruction")

    def __init__(self, paradigm: str, replan_every: int = 8, novelty_window: int = 7,
                 n_view_rays: int = 64, max_candidates: int = 64):
        if paradigm not in self.PARADIGMS:
            raise ValueError(f"unknown paradigm {paradigm!r}")
        self.paradigm = paradigm
        self.name = f"greedy-{paradigm}"
        self.replan_every = replan_every
        self.novelty_window = novelty_window
        self.n_view_rays = n_view_rays
        self.max_candidates = max_candidates

    def reset(self, env, spec, sensor, preset, rng):
        super().reset(env, spec, sensor, preset, rng)
        self.target = None
        self.since = 0
        tab = ray_table(1, self.n_view_rays, 360.0, float(sensor.max_range))
        self._rays = (tab.dx[0], tab.dy[0], tab.valid[0])

    def act(self, ctx: StepContext) -> Action:
        return greedy_paradigm_step(self, ctx.map, ctx.reward_state, ctx.est, ctx.rng)

    # candidate scoring -----------------------------------------------------

    def choose_target(self, plan: Planner, cur, rs, heading: int = 0):
        dist = plan.action_costs(cur, heading, self.n_headings)
        cand, gain = self.candidates(plan, dist, cur, rs)
        if len(cand) == 0:
            return None
        cost = dist[cand[:, 1], cand[:, 0]].astype(float)
        scores = rs.scale * gain / cost
        # candidates arrive in raster order, so the lowest index is the lowest cell index
        i = argmax_lowest(scores)
        return int(cand[i, 0]) + plan.c0, int(cand[i, 1]) + plan.r0

    def candidates(self, plan: Planner, dist, cur, rs):
        """(n, 2) local (col, row) candidates in raster order and their gains."""
        reach = dist >= 1
        p = self.paradigm
        if p == "novelty":
            return self._novelty(plan, dist, reach, rs)
        fmask = frontier_mask(plan.states) & reach
        ys, xs = np.nonzero(fmask)
        cand = np.stack([xs, ys], axis=1)
        if len(cand) == 0:
            return cand, np.zeros(0)
        if p in ("coverage", "smooth-coverage"):
            counts = plan.m.counts[plan.r0:plan.r0 + plan.states.shape[0],
                                   plan.c0:plan.c0 + plan.states.shape[1]]
            mode = 0 if p == "coverage" else 1
            dx, dy, valid = self._rays
            gain = K.view_gains(plan.states, counts, xs.astype(np.int64), ys.astype(np.int64),
                                dx, dy, valid, mode)
            return cand, gain
        if p == "curiosity":
            if len(cand) > self.max_candidates:
                keep = np.linspace(0, len(cand) - 1, self.max_candidates).round().astype(int)
                cand = cand[np.unique(keep)]
            return cand, self._curiosity(plan, cand, cur, rs)
        return cand, self._reconstruction(plan, cand, rs)

    def _novelty(self, plan, dist, reach, rs):
        m = plan.m
        h, w = plan.states.shape
        s = m.cell_size
        mx = np.arange(w) + plan.c0 - m.ox
        my = np.arange(h) + plan.r0 - m.oy
        bx = np.floor(mx * s / rs.state.cell_width).astype(np.int64)
        by = np.floor(my * s / rs.state.cell_width).astype(np.int64)
        ubx, ix = np.unique(bx, return_inverse=True)
        uby, iy = np.unique(by, return_inverse=True)
        bins = np.zeros((len(uby), len(ubx)))
        counts = rs.state.counts
        for j, yb in enumerate(uby):
            for i, xb in enumerate(ubx):
                bins[j, i] = counts.get((int(xb), int(yb)), 0)
        n = bins[iy[:, None], ix[None, :]]
        value = np.where((dist >= 0) & plan.trav, 1.0 / np.sqrt(n + 1.0), 0.0)
        k = self.novelty_window
        gain_map = ndimage.uniform_filter(value, size=k, mode="constant") * (k * k)
        ys, xs = np.nonzero(reach & plan.trav & (n == 0))
        return np.stack([xs, ys], axis=1), gain_map[ys, xs]

    def _curiosity(self, plan, cand, cur, rs):
        model = rs.model
        H = self.n_headings
        lc, lr = plan.local(*cur)
        phis, nexts = [], []
        for x, y in cand:
            dx, dy = x - lc, y - lr
            if abs(dx) >= abs(dy):
                k = 0 if dx > 0 else 2
            else:
                k = 1 if dy > 0 else 3
            heading = k * H // 4
            theta = 2 * math.pi * heading / H
            sx, sy = CARDINAL_STEPS[k]
            a = crop_states(plan.states, x, y, theta, PATCH)
            b = crop_states(plan.states, x + sx, y + sy, theta, PATCH)
            phis.append(curiosity_features(a, heading, H))
            nexts.append(curiosity_features(b, heading, H))
        phi = np.array(phis)
        pred = phi @ model.W[Action.FORWARD].T + model.b[Action.FORWARD]
        return ((pred - np.array(nexts)) ** 2).sum(axis=1)

    def _reconstruction(self, plan, cand, rs):
        q = rs.query_cells(plan.m)  # array (col, row) of query cells
        if q is None or len(q) == 0 or rs.task.losses is None:
            return np.zeros(len(cand))
        gx = cand[:, 0] + plan.c0
        gy = cand[:, 1] + plan.r0
        d2 = (gx[:, None] - q[None, :, 0]) ** 2 + (gy[:, None] - q[None, :, 1]) ** 2
        near = d2 <= self.sensor.max_range ** 2
        return (near * rs.task.losses[None, :]).sum(axis=1)


def greedy_paradigm_step(agent: GreedyAgent, m: OccupancyMap, rs, est: PoseEstimate, rng) -> Action:
    cur = m.index_of(est)
    plan = Planner(m)
    H = agent.n_headings
    if agent.target is not None:
        goal = (agent.target[0] + m.ox, agent.target[1] + m.oy)
        if goal == cur or agent.since >= agent.replan_every:
            agent.target = None
    path = None
    if agent.target is not None:
        path = plan.path(cur, (agent.target[0] + m.ox, agent.target[1] + m.oy))
        if path is None or len(path) < 2:
            agent.target = None
    if agent.target is None:
        agent.since = 0
        goal = agent.choose_target(plan, cur, rs, heading_index(est.theta, H))
        if goal is None:
            return EXPLORATION_ACTIONS[int(rng.integers(3))]
        agent.target = (goal[0] - m.ox, goal[1] - m.oy)
        path = plan.path(cur, goal)
        if path is None or len(path) < 2:
            agent.target = None
            return EXPLORATION_ACTIONS[int(rng.integers(3))]
    agent.since += 1
    return get_action(heading_index(est.theta, H), cur, path[1], H)


def make_agent(name: str, **kw) -> Agent:
    if name in ("random", "forward", "forward+"):
        return HeuristicAgent(name)
    if name == "frontier":
        return FrontierAgent(**kw)
    if name.startswith("oracle-"):
        return OracleAgent(name[len("oracle-"):])
    if name.startswith("greedy-"):
        return GreedyAgent(name[len("greedy-"):], **kw)
    raise ValueError(f"unknown agent {name!r}")
