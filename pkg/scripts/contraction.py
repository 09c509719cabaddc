"""Posterior sd of the effect at two sample sizes; the ratio should sit near sqrt(n1/n2)."""
from __future__ import annotations

import argparse
import math

import numpy as np

from bunchmix.experiments import contraction_study
from bunchmix.sampler import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sizes", type=int, nargs=2, default=(1000, 4000))
    ap.add_argument("--warmup", type=int, default=1000)
    ap.add_argument("--samples", type=int, default=1000)
    args = ap.parse_args()
    cfg = SamplerConfig(chains=4, warmup=args.warmup, samples=args.samples)
    res = contraction_study(range(args.seeds), tuple(args.sizes), cfg)
    small, large = res.sizes
    for i, (a, b) in enumerate(zip(res.sds[small], res.sds[large])):
        print(f"seed {i}: sd n={small} {a:.4f}  n={large} {b:.4f}  ratio {b / a:.3f}")
    print(f"ratio of mean sds {res.ratio:.3f}, mean of ratios {np.mean(res.per_seed_ratios):.3f}, "
          f"root-n rate {math.sqrt(small / large):.3f} ({res.seconds:.0f}s)")


if __name__ == "__main__":
    main()
