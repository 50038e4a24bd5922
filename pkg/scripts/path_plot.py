"""BBEM selection path (phi against v0) on one correlated-design dataset.

Writes path.csv; with matplotlib installed also path.png.

    python3 scripts/path_plot.py --seed 0 --out results/path
"""

import argparse
from pathlib import Path

import numpy as np

from spikeslab_em.bbem import BootstrapConfig
from spikeslab_em.data import gen_correlated, standardize
from spikeslab_em.em import HyperParams
from spikeslab_em.tuning import V0Grid, selection_path


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--K", type=int, default=100)
    ap.add_argument("--L", type=int, default=40)
    ap.add_argument("--grid", default="log:-4:0:17")
    ap.add_argument("--out", type=Path, default=Path("results/path"))
    args = ap.parse_args()

    sim = gen_correlated(args.n, args.seed)
    grid = V0Grid.parse(args.grid)
    path = selection_path(standardize(sim.dataset), HyperParams(), grid, "bbem",
                          bb_cfg=BootstrapConfig(K=args.K, L=args.L, seed=args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    path.to_csv(args.out / "path.csv")

    signal = sim.gamma == 1
    for v0, col in zip(grid.values, path.phi_matrix.T):
        print(f"v0={v0:<10.4g} min signal phi {col[signal].min():.2f}  max noise phi {col[~signal].max():.2f}"
              f"  noise >= 0.5: {int(np.sum(col[~signal] >= 0.5))}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, row in enumerate(path.phi_matrix):
        ax.plot(grid.values, row, color="C3" if signal[j] else "0.6", lw=1.5 if signal[j] else 0.7)
    ax.set_xscale("log")
    ax.axhline(0.5, ls=":", color="k")
    ax.set_xlabel("v0")
    ax.set_ylabel("selection frequency")
    fig.tight_layout()
    fig.savefig(args.out / "path.png", dpi=120)


if __name__ == "__main__":
    main()
