"""Greedy-agent area per environment seed on both presets (plot-ready CSV).

    python scripts/preset_orderings.py --envs 10 --episodes 5 --out orderings.csv
"""

import argparse
import csv
import sys

import numpy as np

from gridexplore.bench.config import ExperimentConfig
from gridexplore.bench.runner import run_suite

GREEDY = ["greedy-novelty", "greedy-coverage", "greedy-smooth-coverage", "greedy-curiosity",
          "greedy-reconstruction"]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--presets", nargs="+", default=["small-cluttered", "large-open"])
    ap.add_argument("--agents", nargs="+", default=GREEDY)
    ap.add_argument("--envs", type=int, default=10)
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="orderings.csv")
    a = ap.parse_args(argv)
    rows = []
    for preset in a.presets:
        cfg = ExperimentConfig(preset=preset, agents=a.agents, env_seeds=list(range(a.envs)),
                               episode_seeds=list(range(a.episodes)), save_logs=False, save_maps=False)
        recs = run_suite(cfg, workers=a.workers, write=False)
        for e in cfg.env_seeds:
            row = {"preset": preset, "env_seed": e}
            for agent in a.agents:
                v = [r["area_norm"] for r in recs if r["agent"] == agent and r["env_seed"] == e and not r["error"]]
                row[agent] = round(float(np.mean(v)), 4)
            rows.append(row)
    with open(a.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
