"""Episode loop and experiment suite runner."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..agents import AGENT_NAMES, ORACLES, StepContext, make_agent
from ..mapping import OccupancyMap, OdometryNoiseModel, PoseEstimate, integrate_odometry, register_scan
from ..rewards import RECON_PERIOD, ReconstructionTask, RewardTracker, discover_concepts
from ..tasks import (NAV_ONLINE, NAV_STEPS, NAV_SUCCESS, RECON_GRID, ConceptPredictor, EpisodicMemory,
                     LocalizationQuery, NoisyPoseEstimator, generate_difficult_nav_episodes, localize_view,
                     mine_landmarks, pointnav_run, precision_at_k, psr_at_k, recon_query_poses,
                     recon_true_distributions, spl)
from ..world import (N_HEADINGS, EpisodeSpec, GridEnvironment, Pose, Sensor, center_depth,
                     distance_field, generate_environment, heading_angle, observe, sample_episode, step,
                     view_signature)
from .config import ExperimentConfig
from .metrics import VisitTracker, landmark_focus, normalize

STREAM_AGENT, STREAM_NOISE, STREAM_FLIP, STREAM_TASK = range(4)
METRIC_KEYS = ("area", "objects", "landmarks")
CONCEPT_K = 8
CONCEPT_SEED_BASE = 1_000_000
LANDMARK_PARAMS = {"small-cluttered": dict(K=24, variance_threshold=0.5, n_views=600),
                   "large-open": dict(K=96, variance_threshold=1.0, n_views=2000)}


def stream(master: int, episode_idx: int, agent_idx: int, kind: int) -> np.random.Generator:
    """Independent generator per (episode, agent, purpose). Noise level is deliberately not
    part of the key so runs at different levels share their random draws."""
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(episode_idx, agent_idx, kind)))


def episode_seed_value(master: int, env_seed: int, episode_seed: int) -> int:
    return int(np.random.SeedSequence([master, env_seed, episode_seed]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# cached per-process inputs


@dataclass
class EnvBundle:
    env: GridEnvironment
    preset: str
    landmark_geo: list
    landmark_focus: list


@lru_cache(maxsize=16)
def env_bundle(preset: str, env_seed: int) -> EnvBundle:
    env = generate_environment(env_seed, preset)
    sensor = Sensor()
    env.landmark_views = mine_landmarks([env], seed=env_seed, sensor=sensor, **LANDMARK_PARAMS[preset])[0]
    geo = [distance_field(env, (lm.x, lm.y)) for lm in env.landmark_views]
    focus = [landmark_focus(env, lm, sensor) for lm in env.landmark_views]
    return EnvBundle(env, preset, geo, focus)


@lru_cache(maxsize=4)
def concept_space(preset: str, K: int = CONCEPT_K, n_envs: int = 4, n_views: int = 300):
    """Concept vocabulary fitted on environments disjoint from any evaluation seed."""
    sigs = []
    sensor = Sensor()
    for i in range(n_envs):
        env = generate_environment(CONCEPT_SEED_BASE + i, preset)
        rng = np.random.default_rng(i)
        free = env.free_cells()
        for j in rng.integers(len(free), size=n_views):
            sigs.append(view_signature(env, Pose(int(free[j][0]), int(free[j][1]),
                                                 int(rng.integers(N_HEADINGS))), sensor))
    return discover_concepts(np.array(sigs), K, seed=0)


@lru_cache(maxsize=16)
def recon_setup(preset: str, env_seed: int):
    env = env_bundle(preset, env_seed).env
    spacing, headings = RECON_GRID[preset]
    queries = recon_query_poses(env, spacing, headings)
    space = concept_space(preset)
    return queries, recon_true_distributions(env, queries, space)


# ---------------------------------------------------------------------------
# episode loop


@dataclass
class EpisodeResult:
    logs: list
    map: OccupancyMap
    scores: list                      # one dict per checkpoint
    checkpoints: list
    reward_sum: float
    collisions: int
    true_poses: list
    est_poses: np.ndarray
    signatures: np.ndarray
    depths: np.ndarray
    snapshots: dict = field(default_factory=dict)


def make_tracker(agent_name: str, preset: str, spec: EpisodeSpec, sensor: Sensor, scale=None):
    if not agent_name.startswith("greedy-"):
        return RewardTracker(None, preset)
    paradigm = agent_name[len("greedy-"):]
    if paradigm != "reconstruction":
        return RewardTracker(paradigm, preset, scale=scale, n_headings=sensor.n_headings)
    queries, dists = recon_setup(preset, spec.env_seed)
    qmap = np.array([[q.x - spec.start.x, q.y - spec.start.y, q.heading] for q in queries],
                    np.int64).reshape(-1, 3)
    predictor = ConceptPredictor(concept_space(preset), qmap, sensor)
    task = ReconstructionTask(queries, dists, period=RECON_PERIOD[preset])
    return RewardTracker("reconstruction", preset, scale=scale, n_headings=sensor.n_headings,
                         predictor=predictor, task=task, query_map_cells=qmap[:, :2])


def run_episode(env: GridEnvironment, agent, tracker: RewardTracker, spec: EpisodeSpec, *,
                preset: str, rngs: dict, sensor: Sensor | None = None, p_flip: float = 0.0,
                checkpoints=None, bundle: EnvBundle | None = None, snapshot_at=()) -> EpisodeResult:
    """Run exactly spec.T_exp steps. rngs holds generators 'agent', 'noise' and 'flip'."""
    sensor = sensor or Sensor()
    s = env.cell_size
    H = sensor.n_headings
    checkpoints = sorted(set(checkpoints or [spec.T_exp]))
    noise = OdometryNoiseModel(spec.eta, forward=s, rotation=2 * math.pi / H)
    pose = spec.start
    est = PoseEstimate(0.0, 0.0, heading_angle(pose.heading, H))
    m = OccupancyMap(s)
    obs = observe(env, pose, sensor)
    register_scan(m, obs, est, sensor, rngs["flip"], p_flip)
    agent.reset(env, spec, sensor, preset, rngs["agent"])
    tracker.begin(m, est, obs)
    geo = bundle.landmark_geo if bundle else [distance_field(env, (l.x, l.y)) for l in env.landmark_views]
    focus = bundle.landmark_focus if bundle else [landmark_focus(env, l, sensor) for l in env.landmark_views]
    visit = VisitTracker(env, preset, sensor, geo, focus)
    visit.update(pose, obs)

    T = spec.T_exp
    logs, scores, true_poses = [], [], [pose]
    est_poses = np.zeros((T + 1, 3))
    est_poses[0] = (est.x, est.y, est.theta)
    sigs = np.zeros((T + 1, env.signatures.shape[2]))
    depths = np.zeros(T + 1)
    sigs[0] = _obs_signature(env, pose, obs)
    depths[0] = obs.center_depth
    snapshots = {}
    total = 0.0
    collisions = 0
    for t in range(1, T + 1):
        ctx = StepContext(t, obs, m, est, rngs["agent"], pose, env, tracker)
        a = agent.act(ctx)
        pose, obs = step(env, pose, a, noise, rngs["noise"], sensor)
        est = integrate_odometry(est, obs.odometry)
        touched = register_scan(m, obs, est, sensor, rngs["flip"], p_flip)
        r = tracker.step(t, a, m, est, obs, touched)
        visit.update(pose, obs)
        total += r
        collisions += int(obs.collision)
        true_poses.append(pose)
        est_poses[t] = (est.x, est.y, est.theta)
        sigs[t] = _obs_signature(env, pose, obs)
        depths[t] = obs.center_depth
        logs.append({"t": t, "action": int(a), "x": pose.x, "y": pose.y, "heading": pose.heading,
                     "est_x": est.x, "est_y": est.y, "est_theta": est.theta, "reward": r,
                     "collision": bool(obs.collision), "explored": m.explored_count()})
        if t in checkpoints:
            scores.append(visit.scores())
        if t in snapshot_at:
            snapshots[t] = m.copy()
    return EpisodeResult(logs, m, scores, checkpoints, total, collisions, true_poses, est_poses,
                         sigs, depths, snapshots)


def _obs_signature(env, pose, obs) -> np.ndarray:
    if obs.hit.any():
        return obs.hit_signatures[obs.hit].mean(axis=0)
    return env.signatures[pose.y, pose.x].copy()


# ---------------------------------------------------------------------------
# downstream tasks on a finished episode


def evaluate_tasks(bundle: EnvBundle, spec: EpisodeSpec, res: EpisodeResult, tasks, rng,
                   n_nav: int = 5, n_loc: int = 10) -> dict:
    env, preset = bundle.env, bundle.preset
    sensor = Sensor()
    out = {}
    start = spec.start
    if "nav" in tasks:
        eps = difficult_episodes(preset, spec.env_seed, start, n_nav)
        results = [pointnav_run(res.map, env, e, NAV_ONLINE[preset], start, sensor) for e in eps]
        out["spl"] = spl(results) if results else math.nan
    if "loc" in tasks:
        mem = EpisodicMemory()
        for i, p in enumerate(res.true_poses):
            tp = ((p.x - start.x) * env.cell_size, (p.y - start.y) * env.cell_size,
                  heading_angle(p.heading, sensor.n_headings))
            e = res.est_poses[i]
            mem.add(res.signatures[i], PoseEstimate(*e), res.depths[i], tp)
        preds, truths = [], []
        for lm in env.landmark_views[:n_loc]:
            q = LocalizationQuery(view_signature(env, lm, sensor), center_depth(env, lm, sensor),
                                  ((lm.x - start.x) * env.cell_size, (lm.y - start.y) * env.cell_size),
                                  heading_angle(lm.heading, sensor.n_headings))
            preds.append(localize_view(mem, q, NoisyPoseEstimator(rng=rng), rng=rng))
            truths.append(q.true_xy)
        out["psr"] = psr_at_k(preds, truths, 1.0) if truths else math.nan
    if "recon" in tasks:
        queries, dists = recon_setup(preset, spec.env_seed)
        qmap = np.array([[q.x - start.x, q.y - start.y, q.heading] for q in queries], np.int64).reshape(-1, 3)
        pred = ConceptPredictor(concept_space(preset), qmap, sensor)
        m = OccupancyMap(env.cell_size)
        for i, p in enumerate(res.true_poses):
            e = PoseEstimate(*res.est_poses[i])
            o = observe(env, p, sensor)
            register_scan(m, o, e, sensor)
            pred.observe(m, e, o)
        P = pred.predict(res.map)
        out["precision"] = float(np.mean([precision_at_k(P[i], dists[i], 2) for i in range(len(P))])) \
            if len(P) else math.nan
    return out


@lru_cache(maxsize=64)
def difficult_episodes(preset: str, env_seed: int, start: Pose, n: int):
    env = env_bundle(preset, env_seed).env
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eps, _ = generate_difficult_nav_episodes(env, n, 1.5, seed=env_seed, start=start,
                                                 T_nav=NAV_STEPS[preset], success_radius=NAV_SUCCESS[preset])
    return tuple(eps)


# ---------------------------------------------------------------------------
# suite


@dataclass(frozen=True)
class Unit:
    index: int
    episode_idx: int
    env_seed: int
    episode_seed: int
    agent: str
    eta: float


def build_units(cfg: ExperimentConfig) -> tuple[list, list]:
    """Agent units in output order plus extra oracle units needed for normalization."""
    units, extra = [], []
    ep = 0
    for env_seed in cfg.env_seeds:
        for ep_seed in cfg.episode_seeds:
            for agent in cfg.agents:
                for eta in cfg.etas:
                    units.append(Unit(len(units), ep, env_seed, ep_seed, agent, float(eta)))
            for o in ORACLES:
                if o not in cfg.agents:
                    extra.append(Unit(-1 - len(extra), ep, env_seed, ep_seed, o, 0.0))
            ep += 1
    return units, extra


def run_unit(cfg: ExperimentConfig, u: Unit) -> dict:
    """One episode. Returns a plain dict so it can cross process boundaries."""
    try:
        bundle = env_bundle(cfg.preset, u.env_seed)
        env = bundle.env
        seed = episode_seed_value(cfg.master_seed, u.env_seed, u.episode_seed)
        spec = sample_episode(env, seed, cfg.T_exp, u.eta)
        spec = EpisodeSpec(u.env_seed, u.episode_seed, spec.start, cfg.T_exp, u.eta)
        a_idx = AGENT_NAMES.index(u.agent)
        rngs = {"agent": stream(cfg.master_seed, u.episode_idx, a_idx, STREAM_AGENT),
                "noise": stream(cfg.master_seed, u.episode_idx, a_idx, STREAM_NOISE),
                "flip": stream(cfg.master_seed, u.episode_idx, a_idx, STREAM_FLIP)}
        sensor = Sensor()
        params = cfg.agent_params.get(u.agent, {})
        agent = make_agent(u.agent, **params)
        tracker = make_tracker(u.agent, cfg.preset, spec, sensor)
        res = run_episode(env, agent, tracker, spec, preset=cfg.preset, rngs=rngs, sensor=sensor,
                          p_flip=cfg.p_flip, checkpoints=cfg.checkpoints, bundle=bundle)
        out = {"unit": u, "scores": res.scores, "reward_sum": res.reward_sum,
               "collisions": res.collisions, "start": spec.start, "error": ""}
        if u.index >= 0:
            if cfg.tasks:
                out.update(evaluate_tasks(bundle, spec, res, cfg.tasks,
                                          stream(cfg.master_seed, u.episode_idx, a_idx, STREAM_TASK)))
            if cfg.save_logs:
                out["log"] = "".join(json.dumps(r, sort_keys=True) + "\n" for r in res.logs)
            if cfg.save_maps:
                out["map"] = {"states": res.map.states, "counts": res.map.counts,
                              "origin": np.array([res.map.ox, res.map.oy]),
                              "start": np.array([spec.start.x, spec.start.y, spec.start.heading]),
                              "true_poses": np.array([[p.x, p.y, p.heading] for p in res.true_poses]),
                              "est_poses": res.est_poses, "signatures": res.signatures,
                              "depths": res.depths}
        return out
    except Exception:  # a failed episode is recorded, the suite carries on
        return {"unit": u, "scores": None, "error": traceback.format_exc(limit=3).strip().splitlines()[-1]}


def _run_chunk(args):
    cfg, units = args
    return [run_unit(cfg, u) for u in units]


def execute(cfg: ExperimentConfig, units: list, workers: int | None = None) -> list:
    workers = workers or cfg.workers
    if workers <= 1:
        return [run_unit(cfg, u) for u in units]
    # keep episodes of the same environment together so per-process caches are reused
    groups: dict = {}
    for u in units:
        groups.setdefault(u.env_seed, []).append(u)
    chunks = [(cfg, g[i:i + 8]) for g in groups.values() for i in range(0, len(g), 8)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        done = [r for chunk in ex.map(_run_chunk, chunks) for r in chunk]
    pos = {u.index: i for i, u in enumerate(units)}
    out = [None] * len(units)
    for r in done:
        out[pos[r["unit"].index]] = r
    return out


CSV_FIELDS = ["index", "agent", "preset", "env_seed", "episode_seed", "eta", "p_flip", "T_exp",
              "start_x", "start_y", "start_heading",
              "area", "objects", "landmarks", "area_norm", "objects_norm", "landmarks_norm",
              "area_absolute", "objects_absolute", "landmarks_absolute",
              "checkpoints", "area_curve", "area_norm_curve", "objects_curve", "landmarks_curve",
              "reward_sum", "collisions", "spl", "psr", "precision", "error"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def make_records(cfg: ExperimentConfig, results: list, oracle_results: list) -> list[dict]:
    """Attach oracle-normalized metrics to every episode result."""
    by_ep: dict = {}
    for r in list(results) + list(oracle_results):
        u = r["unit"]
        if u.agent in ORACLES and r.get("scores"):
            by_ep.setdefault(u.episode_idx, {})[u.agent] = r["scores"]
    records = []
    for r in results:
        u = r["unit"]
        rec = {"index": u.index, "agent": u.agent, "preset": cfg.preset, "env_seed": u.env_seed,
               "episode_seed": u.episode_seed, "eta": u.eta, "p_flip": cfg.p_flip, "T_exp": cfg.T_exp,
               "checkpoints": ";".join(str(c) for c in cfg.checkpoints), "error": r.get("error", "")}
        if r.get("scores"):
            st = r["start"]
            rec.update(start_x=st.x, start_y=st.y, start_heading=st.heading)
            oracles = list(by_ep.get(u.episode_idx, {}).values())
            curves = {k: [] for k in METRIC_KEYS}
            ncurve = []
            for ci, sc in enumerate(r["scores"]):
                for k in METRIC_KEYS:
                    curves[k].append(sc[k])
                best = max((o[ci]["area"] for o in oracles), default=0.0)
                ncurve.append(normalize(sc["area"], best)[0])
            final = r["scores"][-1]
            for k in METRIC_KEYS:
                best = max((o[-1][k] for o in oracles), default=0.0)
                val, flag = normalize(final[k], best)
                rec[k] = final[k]
                rec[k + "_norm"] = val
                rec[k + "_absolute"] = int(flag)
            rec["area_curve"] = ";".join(_fmt(float(v)) for v in curves["area"])
            rec["objects_curve"] = ";".join(str(v) for v in curves["objects"])
            rec["landmarks_curve"] = ";".join(str(v) for v in curves["landmarks"])
            rec["area_norm_curve"] = ";".join(_fmt(float(v)) for v in ncurve)
            rec["reward_sum"] = r["reward_sum"]
            rec["collisions"] = r["collisions"]
            for k in ("spl", "psr", "precision"):
                rec[k] = r.get(k, "")
        records.append(rec)
    return records


def records_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow({k: _fmt(rec.get(k, "")) for k in CSV_FIELDS})
    return buf.getvalue()


def unit_name(u: Unit) -> str:
    return f"{u.index:05d}_{u.agent}_e{u.env_seed}_s{u.episode_seed}_n{u.eta:g}"


def run_suite(cfg: ExperimentConfig, workers: int | None = None, write: bool = True):
    """Run every (environment, episode, agent, noise level) combination.

    Output depends only on the config: results are keyed and ordered by unit index,
    whatever the execution schedule.
    """
    units, extra = build_units(cfg)
    done = execute(cfg, units + extra, workers)
    results, oracle_results = done[:len(units)], done[len(units):]
    records = make_records(cfg, results, oracle_results)
    if write:
        out = Path(cfg.out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.json")
        (out / "results.csv").write_text(records_csv(records))
        if cfg.save_maps:
            (out / "maps").mkdir(exist_ok=True)
        for r in results:
            u = r["unit"]
            if "log" in r:
                (out / "logs" / (unit_name(u) + ".jsonl")).write_text(r["log"])
            if "map" in r:
                with open(out / "maps" / (unit_name(u) + ".npz"), "wb") as f:
                    np.savez_compressed(f, **r["map"])
    return records


def load_records(path) -> list[dict]:
    with open(path) as f:
        return list(csv.DictReader(f))


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
