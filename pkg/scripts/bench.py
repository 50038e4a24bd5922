"""Rank-l refresh against full rebuild of the posterior covariance.

    python3 scripts/bench.py --n 100 --p 1000 --flips 5 --trials 100
"""

import argparse

import numpy as np

from spikeslab_em.cli import bench_trials


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--p", type=int, nargs="+", default=[1000])
    ap.add_argument("--flips", type=int, default=5)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'p':>6} {'full ms':>9} {'incr ms':>9} {'speedup':>8} {'max err':>9}")
    for p in args.p:
        t_inc, t_full, errs, _ = bench_trials(args.n, p, args.flips, args.trials, args.seed)
        full, inc = np.median(t_full) * 1e3, np.median(t_inc) * 1e3
        print(f"{p:>6} {full:>9.3f} {inc:>9.3f} {full / inc:>7.1f}x {errs.max():>9.1e}")


if __name__ == "__main__":
    main()
