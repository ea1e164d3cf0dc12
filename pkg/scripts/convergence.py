"""Per-level PSNR curves of the full, weight, mask and combined chains at R = 8.

    python3 scripts/convergence.py --cache runs/models --out runs/convergence.csv
"""

import argparse
from pathlib import Path

from kspacediff.arrayfile import write_csv
from kspacediff.studies import (SuiteConfig, convergence_case, convergence_rows, convergence_study, is_nondecreasing,
                                iterations_to_fraction, reference_models)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cache", help="directory for model checkpoints (reused when present)")
    ap.add_argument("--out", default="convergence.csv")
    ap.add_argument("--accel", type=float, default=8.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.cache:
        Path(args.cache).mkdir(parents=True, exist_ok=True)
    models = reference_models(("weight", "mask", "identity"), cache=args.cache, log=print)
    ref, meas = convergence_case(args.seed, accel=args.accel)
    sampler = SuiteConfig(accel=args.accel, denoise_final=False, seed=args.seed).sampler()
    curves = convergence_study(models, ref, meas, sampler)
    write_csv(args.out, ["iteration", "chain", "psnr", "ssim"], convergence_rows(curves))
    for chain, c in curves.items():
        print(f"{chain:9s} final {c.psnr[-1]:.2f} dB  95% at iteration {iterations_to_fraction(c.psnr):3d}  "
              f"nondecreasing {is_nondecreasing(c.psnr)}")


if __name__ == "__main__":
    main()
