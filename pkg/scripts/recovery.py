"""Coverage of the single-group effect over seeded synthetic datasets."""
from __future__ import annotations

import argparse
import csv

from bunchmix.experiments import recovery_run
from bunchmix.sampler import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=1000)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--out", help="optional CSV of per-seed results")
    args = ap.parse_args()
    cfg = SamplerConfig(chains=4, warmup=args.warmup, samples=args.samples)
    runs = []
    for s in range(args.seeds):
        r = recovery_run(s, args.n, cfg)
        runs.append(r)
        print(f"seed {s}: truth {r.truth:.4f} point {r.point:.4f} "
              f"[{r.hdi_low:.4f}, {r.hdi_high:.4f}] {'covered' if r.covered else 'MISSED'} ({r.seconds:.0f}s)")
    print(f"covered {sum(r.covered for r in runs)}/{len(runs)}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "truth", "point", "hdi_low", "hdi_high", "sd"])
            for r in runs:
                w.writerow([r.seed, repr(r.truth), repr(r.point), repr(r.hdi_low), repr(r.hdi_high), repr(r.sd)])


if __name__ == "__main__":
    main()
