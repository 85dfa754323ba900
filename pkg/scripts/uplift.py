"""Classifier uplift and similarity probe over several seeds, one pipeline run per seed.

    python scripts/uplift.py [--seeds 0 1 2] [--windows 1 3 5] [--out runs/uplift]
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from tsforge.config import PipelineConfig
from tsforge.pipeline import run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--windows", type=int, nargs="+", default=[3])
    ap.add_argument("--epoch-scale", type=float, default=None)
    ap.add_argument("--out", default="runs/uplift")
    args = ap.parse_args()
    base = PipelineConfig()
    if args.epoch_scale is not None:
        base = replace(base, schedule=replace(base.schedule, epoch_scale=args.epoch_scale))
    acc, sim = {}, {}
    for seed in args.seeds:
        cfg = replace(base, seed=seed,
                      evaluation=replace(base.evaluation, windows=tuple(args.windows), table1=False))
        t0 = time.perf_counter()
        report = run_pipeline(cfg, Path(args.out) / f"seed{seed}")
        for arm, res in report["uplift"]["arms"].items():
            acc.setdefault(arm, []).append(res["accuracy"])
        for arm, res in report["uplift"]["similarity"].items():
            sim.setdefault(arm, []).append(res["accuracy"])
        line = " ".join(f"{k}={v[-1]:.3f}" for k, v in acc.items())
        print(f"seed {seed}: {line} ({time.perf_counter() - t0:.0f}s)", flush=True)
    print("method,mean_accuracy,similarity")
    for arm, vals in acc.items():
        s = f"{np.mean(sim[arm]):.4f}" if arm in sim else ""
        print(f"{arm},{np.mean(vals):.4f},{s}")


if __name__ == "__main__":
    main()
