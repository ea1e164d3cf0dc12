"""Train the reference models and evaluate the held-out phantom suite.

    python3 scripts/reference_run.py --cache runs/models --out runs/suite.csv

Prints per-method mean PSNR/SSIM and writes every metric row to ``--out``.
"""

import argparse
import time
from pathlib import Path

from kspacediff.arrayfile import write_metrics_csv
from kspacediff.studies import SuiteConfig, TrainConfig, evaluate_suite, reference_models, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cache", help="directory for model checkpoints (reused when present)")
    ap.add_argument("--out", default="suite.csv")
    ap.add_argument("--methods", default="serial,parallel,weight,mask")
    ap.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    ap.add_argument("--phantoms", type=int, default=SuiteConfig.n_phantoms)
    ap.add_argument("--accel", type=float, default=SuiteConfig.accel)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.cache:
        Path(args.cache).mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    models = reference_models(("weight", "mask"), TrainConfig(epochs=args.epochs, seed=args.seed), args.cache,
                              log=print)
    print(f"models ready in {time.perf_counter() - t:.0f} s")
    suite = SuiteConfig(n_phantoms=args.phantoms, accel=args.accel, seed=args.seed)
    rows = evaluate_suite(models, suite, methods=args.methods.split(","), log=print)
    write_metrics_csv(args.out, rows)
    psnr, ssim = summarize(rows), summarize(rows, "ssim")
    for m in psnr:
        print(f"{m:12s} PSNR {psnr[m]:6.2f} dB  SSIM {ssim[m]:.4f}")
    print(f"total {time.perf_counter() - t:.0f} s; rows written to {args.out}")


if __name__ == "__main__":
    main()
