"""Wall time of the default suite (12 agents x 50 episodes, eta in {0, 0.15}) per preset.

    python scripts/time_suite.py --workers 4
"""

import argparse
import time

from gridexplore.bench.config import ExperimentConfig
from gridexplore.bench.runner import default_workers, run_suite


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--presets", nargs="+", default=["small-cluttered", "large-open"])
    ap.add_argument("--workers", type=int, default=default_workers())
    ap.add_argument("--out-dir", default="runs/timing")
    a = ap.parse_args(argv)
    total = 0.0
    for preset in a.presets:
        cfg = ExperimentConfig(preset=preset, etas=[0.0, 0.15], out_dir=f"{a.out_dir}/{preset}", save_logs=False)
        t = time.perf_counter()
        recs = run_suite(cfg, workers=a.workers)
        dt = time.perf_counter() - t
        total += dt
        bad = sum(1 for r in recs if r["error"])
        print(f"{preset}: {len(recs)} records, {bad} failed, {dt:.0f} s with {a.workers} worker(s)")
    print(f"total {total:.0f} s")


if __name__ == "__main__":
    main()
