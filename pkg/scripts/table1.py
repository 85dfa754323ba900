"""Six-arm scaling x prediction-target comparison on the synthetic benchmark.

    python scripts/table1.py [--seed 0] [--epochs 300] [--reps 100] [--out table1.csv]
"""
import argparse
import time

from tsforge.config import PipelineConfig
from tsforge.dataset import generate_synthetic
from tsforge.evaluation import run_table1_matrix


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = PipelineConfig()
    dcfg = cfg.diffusion if args.epochs is None else cfg.diffusion.__class__(
        **{**cfg.diffusion.__dict__, "epochs": args.epochs})
    corpus = generate_synthetic(cfg.synthetic, args.seed)
    t0 = time.perf_counter()
    rep = run_table1_matrix(corpus, dcfg, cfg.evaluation.first_per_class,
                            args.reps or cfg.evaluation.repetitions, cfg.evaluation.fraction, args.seed)
    print(rep["csv"], end="")
    print(f"# {time.perf_counter() - t0:.0f}s")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rep["csv"])


if __name__ == "__main__":
    main()
