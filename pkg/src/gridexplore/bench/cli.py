"""Command line entry point: gridexplore {gen-envs,landmarks,run,eval,sweep,render}."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from ..agents import AGENT_NAMES, ORACLES
from ..tasks import mine_landmarks
from ..world import PRESETS, Pose, Sensor, generate_environment, load_environment, save_environment, visible_cells
from . import render
from .config import ExperimentConfig
from .metrics import nrc
from .runner import (LANDMARK_PARAMS, default_workers, env_bundle, load_records, records_csv,
                     run_suite)


# ---------------------------------------------------------------------------
# checks on finished records


def check_records(cfg: ExperimentConfig, records: list[dict]) -> list[tuple[str, bool, str]]:
    """Assertions that must hold for any completed suite."""
    out = []
    expected = len(cfg.agents) * len(cfg.env_seeds) * len(cfg.episode_seeds) * len(cfg.etas)
    errors = [r for r in records if r.get("error")]
    out.append(("complete", len(records) == expected and not errors,
                f"{len(records)}/{expected} records, {len(errors)} failed"))
    bad_curve = 0
    for r in records:
        if r.get("error"):
            continue
        c = [float(v) for v in str(r["area_curve"]).split(";") if v]
        bad_curve += any(b < a - 1e-12 for a, b in zip(c, c[1:]))
    out.append(("monotone area curves", bad_curve == 0, f"{bad_curve} decreasing"))
    # every episode's best area oracle normalizes to 1 (when it is part of the run)
    present = [o for o in ORACLES if o in cfg.agents]
    if present:
        best: dict = {}
        for r in records:
            if r["agent"] in present and not r.get("error") and float(r["eta"]) == 0:
                key = (r["env_seed"], r["episode_seed"])
                best[key] = max(best.get(key, 0.0), float(r["area_norm"]))
        ok = all(abs(v - 1.0) < 1e-9 for v in best.values())
        out.append(("best oracle area = 1", ok, f"{len(best)} episodes"))
    return out


def report(checks) -> bool:
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all(ok for _, ok, _ in checks)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_envs(a) -> int:
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(a.count):
        env = generate_environment(a.seed + i, a.preset)
        path = out / f"{a.preset}_{a.seed + i:05d}.npz"
        save_environment(env, path)
        print(path)
    return 0


def cmd_landmarks(a) -> int:
    rc = 0
    for p in a.envs:
        env = load_environment(p)
        params = dict(LANDMARK_PARAMS[env.preset])
        if a.K:
            params["K"] = a.K
        if a.variance_threshold:
            params["variance_threshold"] = a.variance_threshold
        env.landmark_views = mine_landmarks([env], seed=env.seed, **params)[0]
        save_environment(env, p)
        print(f"{p}: {len(env.landmark_views)} landmark views")
        rc |= not env.landmark_views
    return int(a.check and rc)


def _config(a) -> ExperimentConfig:
    d = ExperimentConfig.load(a.config).to_dict() if a.config else {}
    for key in ("preset", "agents", "etas", "out_dir", "T_exp", "master_seed", "p_flip"):
        v = getattr(a, key, None)
        if v is not None:
            d[key] = v
    if getattr(a, "env_seeds", None) is not None:
        d["env_seeds"] = list(range(a.env_seeds))
    if getattr(a, "episode_seeds", None) is not None:
        d["episode_seeds"] = list(range(a.episode_seeds))
    if getattr(a, "no_logs", False):
        d["save_logs"] = d["save_maps"] = False
    return ExperimentConfig.from_dict(d)


def cmd_run(a) -> int:
    cfg = _config(a)
    records = run_suite(cfg, workers=a.workers or default_workers())
    print(f"wrote {len(records)} records to {Path(cfg.out_dir) / 'results.csv'}")
    if a.check:
        return 0 if report(check_records(cfg, records)) else 1
    return 0


def cmd_eval(a) -> int:
    """Replay a finished run with downstream tasks enabled and merge the task columns.

    Episodes are deterministic in the config, so the replay reproduces the trajectories
    that produced the stored records.
    """
    run_dir = Path(a.run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json")
    cfg.tasks = sorted(set(cfg.tasks) | set(a.task))
    cfg.save_logs = cfg.save_maps = False
    records = run_suite(cfg, workers=a.workers or default_workers(), write=False)
    path = run_dir / "results.csv"
    old = load_records(path) if path.exists() else []
    cols = {"nav": "spl", "loc": "psr", "recon": "precision"}
    if len(old) == len(records):
        for o, r in zip(old, records):
            for t in a.task:
                o[cols[t]] = r.get(cols[t], "")
        path.write_text(records_csv(old))
    else:
        path.write_text(records_csv(records))
    for t in a.task:
        vals = [float(r[cols[t]]) for r in records if r.get(cols[t], "") != "" and not r.get("error")]
        vals = [v for v in vals if not math.isnan(v)]
        print(f"{t}: mean {cols[t]} = {np.mean(vals):.4f} over {len(vals)} episodes" if vals else f"{t}: no values")
    return 0


def sweep_summary(records_by_cond: dict) -> list[dict]:
    """Mean normalized area per (agent, eta, p_flip) and NRC against the noise-free condition."""
    groups: dict = {}
    for (eta, pf), recs in records_by_cond.items():
        for r in recs:
            if r.get("error"):
                continue
            groups.setdefault((r["agent"], eta, pf), []).append(float(r["area_norm"]))
    rows = []
    for (agent, eta, pf), v in sorted(groups.items()):
        clean = groups.get((agent, 0.0, 0.0))
        mean = float(np.mean(v))
        base = float(np.mean(clean)) if clean else math.nan
        rows.append({"agent": agent, "eta": eta, "p_flip": pf, "area_norm": mean, "n": len(v),
                     "nrc": nrc(mean, base) if clean and base > 0 else math.nan})
    return rows


def cmd_sweep(a) -> int:
    base = _config(a)
    out = Path(base.out_dir)
    conds = [(eta, 0.0) for eta in a.eta] + [(0.0, pf) for pf in a.p_flip_levels if pf > 0]
    records_by_cond = {}
    for eta, pf in conds:
        d = base.to_dict()
        d.update(etas=[eta], p_flip=pf, out_dir=str(out / f"eta{eta:g}_flip{pf:g}"))
        cfg = ExperimentConfig.from_dict(d)
        records_by_cond[(eta, pf)] = run_suite(cfg, workers=a.workers or default_workers())
    rows = sweep_summary(records_by_cond)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["agent", "eta", "p_flip", "n", "area_norm", "nrc"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['agent']:24s} eta={r['eta']:<5g} p_flip={r['p_flip']:<5g} area_norm={r['area_norm']:.3f} "
              f"nrc={r['nrc']:.3f}")
    if a.check:
        checks = []
        for (eta, pf), recs in records_by_cond.items():
            d = base.to_dict()
            d.update(etas=[eta], p_flip=pf)
            checks += [(f"{n} (eta={eta:g}, p_flip={pf:g})", ok, det)
                       for n, ok, det in check_records(ExperimentConfig.from_dict(d), recs)]
        clean = [r for r in rows if r["eta"] == 0 and r["p_flip"] == 0]
        checks.append(("nrc = 1 without noise", all(r["nrc"] == 1.0 for r in clean), f"{len(clean)} agents"))
        return 0 if report(checks) else 1
    return 0


def cmd_render(a) -> int:
    src = Path(a.input)
    out = Path(a.out) if a.out else src.with_suffix("." + a.format)
    if src.name == "config.json" or src.is_dir():
        raise SystemExit("render takes an environment .npz or a run's maps/*.npz file")
    with np.load(src) as z:
        keys = set(z.files)
        if "states" in keys:
            states, true = z["states"], z["true_poses"]
        else:
            states = None
    if states is None:
        env = load_environment(src)
        img = render.trajectory_image(env.occupancy, np.zeros_like(env.occupancy), [])
    elif a.trajectory:
        cfg = ExperimentConfig.load(src.parent.parent / "config.json")
        env_seed = int(src.stem.split("_e")[-1].split("_")[0])
        env = env_bundle(cfg.preset, env_seed).env
        sensor = Sensor()
        seen = np.zeros(env.occupancy.shape, bool)
        for x, y, h in true:
            v = visible_cells(env, Pose(int(x), int(y), int(h)), sensor)
            seen[v[:, 1], v[:, 0]] = True
        img = render.trajectory_image(env.occupancy, seen, true[:, :2])
    else:
        img = render.state_image(states)
        if not a.out and a.format == "ppm":
            out = out.with_suffix(".pgm")
    render.save_image(out, img, a.scale)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridexplore", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-envs", help="generate and save environments")
    p.add_argument("--preset", choices=PRESETS, default="small-cluttered")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="envs")
    p.set_defaults(func=cmd_gen_envs)

    p = sub.add_parser("landmarks", help="mine landmark views into saved environments")
    p.add_argument("envs", nargs="+")
    p.add_argument("--K", type=int)
    p.add_argument("--variance-threshold", type=float)
    p.add_argument("--check", action="store_true", help="fail if an environment gets no landmarks")
    p.set_defaults(func=cmd_landmarks)

    def suite_args(p):
        p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
        p.add_argument("--preset", choices=PRESETS)
        p.add_argument("--agent", dest="agents", action="append", choices=AGENT_NAMES)
        p.add_argument("--env-seeds", type=int, help="use environment seeds 0..N-1")
        p.add_argument("--episode-seeds", type=int, help="use episode seeds 0..N-1")
        p.add_argument("--T-exp", dest="T_exp", type=int)
        p.add_argument("--master-seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--workers", type=int)
        p.add_argument("--no-logs", action="store_true")
        p.add_argument("--check", action="store_true", help="exit nonzero if a suite assertion fails")

    p = sub.add_parser("run", help="run an experiment suite")
    suite_args(p)
    p.add_argument("--eta", dest="etas", type=float, action="append")
    p.add_argument("--p-flip", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="add downstream task metrics to a finished run")
    p.add_argument("--task", action="append", choices=["nav", "loc", "recon"], required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="odometry and occupancy noise sweep with NRC summary")
    suite_args(p)
    p.add_argument("--eta", type=float, nargs="+", default=[0.0, 0.15, 0.3])
    p.add_argument("--p-flip-levels", type=float, nargs="+", default=[0.05])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="render an environment or saved map to PPM/PGM/SVG")
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--format", choices=["ppm", "svg"], default="ppm")
    p.add_argument("--trajectory", action="store_true", help="explored area and time-coloured path")
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
