"""Exploration reward functions: novelty, coverage, smooth coverage, curiosity and
reconstruction, plus k-means concept discovery and KL machinery."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

KL_EPS = 1e-6
NORM_TOL = 1e-9

# default reward scales per preset
NOVELTY_SCALE = {"small-cluttered": 0.1, "large-open": 0.1}
NOVELTY_CELL = {"small-cluttered": 0.3, "large-open": 0.5}
COVERAGE_SCALE = {"small-cluttered": 0.01, "large-open": 0.001}
SMOOTH_SCALE = {"small-cluttered": 0.3, "large-open": 0.3}
CURIOSITY_SCALE = {"small-cluttered": 0.001, "large-open": 0.0001}
RECON_SCALE = {"small-cluttered": 0.1, "large-open": 1.0}
RECON_PERIOD = {"small-cluttered": 1, "large-open": 5}


# ---------------------------------------------------------------------------
# novelty


@dataclass
class NoveltyState:
    cell_width: float = 0.5
    scale: float = 0.1
    counts: dict = field(default_factory=lambda: defaultdict(int))
    total: int = 0

    def cell(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.cell_width)), int(math.floor(y / self.cell_width))


def novelty_update_and_reward(state: NoveltyState, x: float, y: float) -> float:
    """Count the visit first, then reward scale / sqrt(n)."""
    c = state.cell(x, y)
    state.counts[c] += 1
    state.total += 1
    return state.scale / math.sqrt(state.counts[c])


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageState:
    """Cumulative covered quantity A (area in m^2, or a count of objects/landmarks)
    and per-region view counts for the smooth variant."""

    scale: float = 1.0
    target: str = "area"
    area: float = 0.0
    counts: dict = field(default_factory=lambda: defaultdict(int))
    seen: set = field(default_factory=set)

    def __post_init__(self):
        if self.target not in ("area", "objects", "landmarks"):
            raise ValueError(f"unknown coverage target {self.target!r}")


def area_coverage_reward(state: CoverageState, newly_seen: float) -> float:
    """scale * (A_t - A_{t-1}) where newly_seen = A_t - A_{t-1}."""
    if newly_seen < 0:
        raise ValueError("newly seen amount must be non-negative")
    state.area += newly_seen
    return state.scale * newly_seen


def coverage_observe(state: CoverageState, items, unit: float = 1.0) -> float:
    """Add items (cells, object ids, landmark ids) to the seen set and reward the growth."""
    before = len(state.seen)
    state.seen.update(items)
    return area_coverage_reward(state, (len(state.seen) - before) * unit)


def smooth_coverage_reward(state: CoverageState, seen_now) -> float:
    """Increment counts of regions in view, then reward the mean of 1/sqrt(n_i)."""
    regions = list(dict.fromkeys(seen_now))
    if not regions:
        return 0.0
    acc = 0.0
    for r in regions:
        state.counts[r] += 1
        acc += 1.0 / math.sqrt(state.counts[r])
    return state.scale * acc / len(regions)


def smooth_coverage_reward_counts(counts: np.ndarray, flat_idx: np.ndarray, scale: float) -> float:
    """Array form of smooth_coverage_reward over a count grid. Mutates counts."""
    if len(flat_idx) == 0:
        return 0.0
    c = counts.reshape(-1)
    c[flat_idx] += 1
    return scale * float(np.mean(1.0 / np.sqrt(c[flat_idx])))


# ---------------------------------------------------------------------------
# curiosity


PATCH = 11
N_STATES = 3


def curiosity_features(patch: np.ndarray, heading_bucket: int, n_headings: int = 12) -> np.ndarray:
    """One-hot map patch (free / obstacle / unexplored per cell) plus heading one-hot."""
    onehot = np.zeros((patch.size, N_STATES))
    onehot[np.arange(patch.size), patch.reshape(-1).astype(np.int64)] = 1.0
    h = np.zeros(n_headings)
    h[heading_bucket % n_headings] = 1.0
    return np.concatenate([onehot.reshape(-1), h])


class CuriosityModel:
    """One affine forward model per action, trained online by normalized LMS.

    Each update moves the prediction for the seen input a fraction lr of the way to the
    target, so repeating a transition shrinks its error geometrically.
    """

    def __init__(self, dim: int, n_actions: int = 3, lr: float = 0.5, scale: float = 1.0):
        if not 0 < lr <= 1:
            raise ValueError("lr must be in (0, 1]")
        self.dim = dim
        self.lr = lr
        self.scale = scale
        self.W = np.zeros((n_actions, dim, dim))
        self.b = np.zeros((n_actions, dim))

    def predict(self, phi: np.ndarray, action: int) -> np.ndarray:
        return self.W[action] @ phi + self.b[action]

    def error(self, phi: np.ndarray, action: int, phi_next: np.ndarray) -> float:
        e = self.predict(phi, action) - phi_next
        return float(e @ e)

    def update(self, phi: np.ndarray, action: int, phi_next: np.ndarray) -> None:
        e = self.predict(phi, action) - phi_next
        g = self.lr / (phi @ phi + 1.0)
        self.W[action] -= g * np.outer(e, phi)
        self.b[action] -= g * e


def curiosity_reward(model: CuriosityModel, phi: np.ndarray, action: int, phi_next: np.ndarray) -> float:
    """Prediction error of the forward model, computed before its online update."""
    phi = np.asarray(phi, float)
    phi_next = np.asarray(phi_next, float)
    if phi.shape != (model.dim,) or phi_next.shape != (model.dim,):
        raise ValueError("feature dimension mismatch")
    r = model.scale * model.error(phi, action, phi_next)
    model.update(phi, action, phi_next)
    return r


# ---------------------------------------------------------------------------
# concepts


@dataclass
class ConceptSpace:
    centroids: np.ndarray
    inertia: float = 0.0
    history: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.centroids)

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Nearest centroid per row (lowest index on ties)."""
        return np.argmin(_sqdist(np.atleast_2d(x), self.centroids), axis=1)

    def save(self, path) -> None:
        K, F = self.centroids.shape
        with open(path, "w") as f:
            f.write(f"concept_space 1 {K} {F}\n")
            for row in self.centroids:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "ConceptSpace":
        with open(path) as f:
            head = f.readline().split()
            if head[:2] != ["concept_space", "1"]:
                raise ValueError("not a version 1 concept space file")
            K, F = int(head[2]), int(head[3])
            rows = np.array([[float(v) for v in f.readline().split()] for _ in range(K)])
        if rows.shape != (K, F):
            raise ValueError("truncated concept space file")
        return cls(rows)


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def discover_concepts(samples: np.ndarray, K: int = 8, max_iters: int = 100, seed: int = 0) -> ConceptSpace:
    """k-means with k-means++ seeding. history holds the inertia after every update."""
    x = np.asarray(samples, float)
    n = len(x)
    if K < 1 or K > n:
        raise ValueError(f"need 1 <= K <= number of samples ({n}), got {K}")
    rng = np.random.default_rng(seed)
    cent = np.empty((K, x.shape[1]))
    cent[0] = x[rng.integers(n)]
    d2 = ((x - cent[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        tot = d2.sum()
        i = rng.choice(n, p=d2 / tot) if tot > 0 else int(rng.integers(n))
        cent[k] = x[i]
        d2 = np.minimum(d2, ((x - cent[k]) ** 2).sum(axis=1))
    assign = None
    history = []
    for _ in range(max_iters):
        new = np.argmin(_sqdist(x, cent), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for k in range(K):
            members = x[assign == k]
            if len(members):
                cent[k] = members.mean(axis=0)
        history.append(float(((x - cent[assign]) ** 2).sum()))
    return ConceptSpace(cent, history[-1], history)


def true_concept_distribution(signature, space: ConceptSpace, J: int = 3) -> np.ndarray:
    """Uniform mass on the J nearest centroids."""
    if not 1 <= J <= space.K:
        raise ValueError("need 1 <= J <= K")
    d = ((space.centroids - np.asarray(signature, float)) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(space.K), d))[:J]
    p = np.zeros(space.K)
    p[order] = 1.0 / J
    return p


def _check_dist(p, name):
    p = np.asarray(p, float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"{name} is not a probability distribution")
    return p


def smooth(q: np.ndarray, eps: float = KL_EPS) -> np.ndarray:
    return (1.0 - eps) * q + eps / q.shape[-1]


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL(p || q) with q mixed toward uniform by eps."""
    p = _check_dist(p, "p")
    q = smooth(_check_dist(q, "q"), eps)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_rows(P: np.ndarray, Q: np.ndarray, eps: float = KL_EPS) -> np.ndarray:
    """Row-wise KL for already-validated distribution matrices."""
    Q = smooth(Q, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P / Q), 0.0)
    return terms.sum(axis=1)


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionTask:
    queries: list                 # query poses
    true_dists: np.ndarray        # [Q, K]
    period: int = 5
    scale: float = 1.0
    losses: np.ndarray | None = None   # per-query loss at the last reward time
    last_loss: float | None = None

    def __post_init__(self):
        self.true_dists = np.asarray(self.true_dists, float)
        if not np.allclose(self.true_dists.sum(axis=1), 1.0, atol=NORM_TOL):
            raise ValueError("true distributions must sum to 1")
        if self.last_loss is None:
            K = self.true_dists.shape[1]
            uniform = np.full_like(self.true_dists, 1.0 / K)
            self.losses = kl_rows(self.true_dists, uniform)
            self.last_loss = float(self.losses.mean())


def reconstruction_loss(task: ReconstructionTask, pred: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, float)
    if pred.shape != task.true_dists.shape:
        raise ValueError("prediction shape mismatch")
    if not np.allclose(pred.sum(axis=1), 1.0, atol=NORM_TOL) or np.any(pred < 0):
        raise ValueError("predictions must be distributions")
    return kl_rows(task.true_dists, pred)


def reconstruction_reward(task: ReconstructionTask, pred: np.ndarray, t: int) -> float:
    """scale * (L_{t - period} - L_t) with L the mean per-query KL."""
    if t % task.period != 0:
        raise ValueError(f"reconstruction reward only at multiples of {task.period}")
    losses = reconstruction_loss(task, pred)
    L = float(losses.mean())
    r = task.scale * (task.last_loss - L)
    task.losses = losses
    task.last_loss = L
    return r


# ---------------------------------------------------------------------------
# per-episode bookkeeping


PARADIGMS = ("novelty", "coverage", "smooth-coverage", "curiosity", "reconstruction")


def default_scale(paradigm: str, preset: str) -> float:
    table = {"novelty": NOVELTY_SCALE, "coverage": COVERAGE_SCALE,
             "smooth-coverage": SMOOTH_SCALE, "curiosity": CURIOSITY_SCALE,
             "reconstruction": RECON_SCALE}[paradigm]
    return table.get(preset, table["small-cluttered"])


class RewardTracker:
    """Computes one paradigm's reward along an episode from the agent's own map and pose.

    Smooth coverage uses the map's per-cell scan counts as the region counts n_i, since a
    scan raises the count of exactly the cells it touches. Reconstruction needs a
    predictor with observe(map, est, obs) and predict(map) -> [Q, K], plus the task and
    the query cells in map coordinates.
    """

    def __init__(self, paradigm: str | None, preset: str = "small-cluttered", scale: float | None = None,
                 n_headings: int = 12, predictor=None, task: ReconstructionTask | None = None,
                 query_map_cells=None):
        if paradigm is not None and paradigm not in PARADIGMS:
            raise ValueError(f"unknown paradigm {paradigm!r}")
        self.paradigm = paradigm
        self.preset = preset
        self.scale = scale if scale is not None else (default_scale(paradigm, preset) if paradigm else 1.0)
        self.n_headings = n_headings
        self.total = 0.0
        self.state = None
        self.model = None
        self.phi = None
        self.predictor = predictor
        self.task = task
        self._queries = None if query_map_cells is None else np.asarray(query_map_cells, np.int64)
        if paradigm == "novelty":
            self.state = NoveltyState(NOVELTY_CELL.get(preset, 0.5), self.scale)
        elif paradigm in ("coverage", "smooth-coverage"):
            self.state = CoverageState(self.scale)
        elif paradigm == "curiosity":
            self.model = CuriosityModel(PATCH * PATCH * N_STATES + n_headings, scale=self.scale)
        elif paradigm == "reconstruction":
            if predictor is None or task is None:
                raise ValueError("reconstruction needs a predictor and a task")
            task.scale = self.scale

    def query_cells(self, m):
        """Query positions as map array (col, row)."""
        if self._queries is None:
            return None
        return self._queries + np.array([m.ox, m.oy])

    def _features(self, m, est):
        from .mapping import crop_states
        theta = est.theta
        h = int(round(theta / (2 * math.pi / self.n_headings))) % self.n_headings
        col = est.x / m.cell_size + m.ox
        row = est.y / m.cell_size + m.oy
        return curiosity_features(crop_states(m.states, col, row, theta, PATCH), h, self.n_headings)

    def begin(self, m, est, obs=None) -> None:
        if self.paradigm in ("coverage", "smooth-coverage"):
            self.state.area = m.explored_area()
        elif self.paradigm == "curiosity":
            self.phi = self._features(m, est)
        elif self.paradigm == "reconstruction":
            self.predictor.observe(m, est, obs)

    def step(self, t: int, action, m, est, obs, touched) -> float:
        """Reward for the transition that produced step t (t counts from 1)."""
        p = self.paradigm
        r = 0.0
        if p == "novelty":
            # bin the centre of the occupied map cell so planners can bin cells identically
            mx, my = m.cell_of(est.x, est.y)
            r = novelty_update_and_reward(self.state, mx * m.cell_size, my * m.cell_size)
        elif p == "coverage":
            r = area_coverage_reward(self.state, max(0.0, m.explored_area() - self.state.area))
        elif p == "smooth-coverage":
            if len(touched):
                n = m.counts[touched[:, 0], touched[:, 1]]
                r = self.scale * float(np.mean(1.0 / np.sqrt(n)))
            self.state.area = m.explored_area()
        elif p == "curiosity":
            nxt = self._features(m, est)
            if int(action) < self.model.W.shape[0]:
                r = curiosity_reward(self.model, self.phi, int(action), nxt)
            self.phi = nxt
        elif p == "reconstruction":
            self.predictor.observe(m, est, obs)
            if t % self.task.period == 0:
                r = reconstruction_reward(self.task, self.predictor.predict(m), t)
        self.total += r
        return r
