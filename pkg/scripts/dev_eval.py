"""Quick comparison of agents on development seeds (disjoint from acceptance seeds)."""

import argparse
import json
import time

import numpy as np

from gridexplore.bench.config import ExperimentConfig
from gridexplore.bench.runner import run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="large-open")
    ap.add_argument("--agents", nargs="+", default=["frontier", "greedy-novelty", "greedy-coverage",
                                                    "greedy-smooth-coverage"])
    ap.add_argument("--envs", type=int, nargs="+", default=list(range(500, 505)))
    ap.add_argument("--episodes", type=int, default=2)
    ap.add_argument("--etas", type=float, nargs="+", default=[0.0])
    ap.add_argument("--params", default="{}", help="JSON agent_params")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = ExperimentConfig(preset=args.preset, agents=args.agents, env_seeds=args.envs,
                           episode_seeds=list(range(args.episodes)), etas=args.etas,
                           agent_params=json.loads(args.params), save_logs=False, save_maps=False,
                           master_seed=12345)
    t = time.time()
    recs = run_suite(cfg, workers=args.workers, write=False)
    print(f"{len(recs)} episodes in {time.time() - t:.1f}s")
    for a in args.agents:
        for eta in args.etas:
            v = [r["area_norm"] for r in recs if r["agent"] == a and r["eta"] == eta and not r["error"]]
            o = [r["objects_norm"] for r in recs if r["agent"] == a and r["eta"] == eta and not r["error"]]
            print(f"{a:24s} eta={eta:<5g} area_norm={np.mean(v):.3f} +- {np.std(v) / np.sqrt(len(v)):.3f}"
                  f"  objects_norm={np.mean(o):.3f}")
    errs = [r["error"] for r in recs if r["error"]]
    if errs:
        print("errors:", errs[:3])


if __name__ == "__main__":
    main()
