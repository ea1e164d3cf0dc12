"""Weight/mask feature-map correlation over window sizes on the held-out phantoms.

    python3 scripts/correlation.py --size 256 --windows 30,50,70
"""

import argparse

import numpy as np

from kspacediff.kspace import sos_combine
from kspacediff.phantom import make_phantom
from kspacediff.studies import TEST_SEED_OFFSET, correlation_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--windows", default="30,50,70")
    args = ap.parse_args()

    images = np.stack([sos_combine(make_phantom(seed=TEST_SEED_OFFSET + i, shape=(args.size, args.size)))
                       for i in range(args.count)])
    res = correlation_study(images, windows=[int(w) for w in args.windows.split(",")])
    for n, s in zip(res["windows"], res["scaled"]):
        vals = res["per_image"][n]
        print(f"window {n:3d} (scaled {s:3d}): mean rho {res['mean'][n]:.4f}  range [{min(vals):.4f}, {max(vals):.4f}]")
    print(f"maximizer {res['argmax']}, middle window {res['middle']}")


if __name__ == "__main__":
    main()
