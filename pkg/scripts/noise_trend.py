"""Mean normalized area against odometry noise level, one row per (agent, eta).

    python scripts/noise_trend.py --envs 20 --episodes 5 --out noise_trend.csv
"""

import argparse
import csv
import sys

import numpy as np

from gridexplore.bench.config import ExperimentConfig
from gridexplore.bench.runner import run_suite


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="large-open")
    ap.add_argument("--agents", nargs="+", default=["frontier", "greedy-novelty"])
    ap.add_argument("--etas", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.3])
    ap.add_argument("--envs", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="noise_trend.csv")
    a = ap.parse_args(argv)
    cfg = ExperimentConfig(preset=a.preset, agents=a.agents, env_seeds=list(range(a.envs)),
                           episode_seeds=list(range(a.episodes)), etas=a.etas, save_logs=False, save_maps=False)
    recs = run_suite(cfg, workers=a.workers, write=False)
    rows = []
    for agent in a.agents:
        base = None
        for eta in a.etas:
            v = np.array([r["area_norm"] for r in recs if r["agent"] == agent and r["eta"] == eta and not r["error"]])
            m = float(v.mean())
            base = m if base is None else base
            rows.append({"agent": agent, "eta": eta, "n": len(v), "area_norm": round(m, 4),
                         "se": round(float(v.std(ddof=1) / np.sqrt(len(v))), 4) if len(v) > 1 else "",
                         "drop": round(1 - m / base, 4)})
    with open(a.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
