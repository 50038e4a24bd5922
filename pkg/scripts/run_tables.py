"""Rerun the simulation tables and compare them with the published rows.

    python3 scripts/run_tables.py --out results/tables --jobs 4
    python3 scripts/run_tables.py --only table1 --reps 20
"""

import argparse
import json
from pathlib import Path

from spikeslab_em.data import SimDesign
from spikeslab_em.experiments import ExperimentSpec, compare_to_reference, run_experiment
from spikeslab_em.tuning import V0Grid

LARGE_P_GRID = V0Grid((0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1))

# (table, reference row, ExperimentSpec kwargs); replicates are filled in from --reps
RUNS = [
    ("table1", "EM n=40", dict(design=SimDesign("tibshirani", 40, sigma=3.0), method="em", tuner="cv")),
    ("table1", "EM n=60", dict(design=SimDesign("tibshirani", 60, sigma=1.0), method="em", tuner="cv")),
    ("table2", "EM n=50 sigma=3", dict(design=SimDesign("tibshirani", 50, sigma=3.0), method="em", tuner="bic",
                                       style="counts")),
    ("table2", "EM n=50 sigma=6", dict(design=SimDesign("tibshirani", 50, sigma=6.0), method="em", tuner="bic",
                                       style="counts")),
    ("table3", "BBEM correlated n=50", dict(design=SimDesign("correlated", 50), method="bbem", tuner="cv", K=100,
                                            L=40, default_reps=50)),
    ("table4", "BBEM (BIC) large_p", dict(design=SimDesign("large_p", 100, 1000), method="bbem", tuner="bic", K=100,
                                          L=50, grid=LARGE_P_GRID, default_reps=20)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("results/tables"))
    ap.add_argument("--only", choices=sorted({r[0] for r in RUNS}), action="append")
    ap.add_argument("--reps", type=int, default=None, help="override the replicate count of every run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--frequency", choices=("replicates", "inclusions"), default="replicates")
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for table, row, kw in RUNS:
        if args.only and table not in args.only:
            continue
        kw = dict(kw)
        reps = args.reps or kw.pop("default_reps", 100)
        kw.pop("default_reps", None)
        if kw["method"] == "bbem":
            kw["frequency"] = args.frequency
        spec = ExperimentSpec(replicates=reps, seed=args.seed, **kw)
        result = run_experiment(spec, jobs=args.jobs, label=row)
        report = compare_to_reference(result, row, float("inf"))
        print(f"[{table}] {row}  ({result.wall_clock:.0f}s, {result.failures} failed)")
        print(result.to_text())
        print(f"reference: {report.citation}")
        for c in report.cells:
            print(f"  {c.cell:18s} observed {c.observed:8.3f}  published {c.reference:8.3f}  dev {c.deviation:+.3f}")
        print()
        stem = row.replace(" ", "_").replace("=", "").replace("(", "").replace(")", "")
        (args.out / f"{stem}.csv").write_text(result.to_csv())
        summary[row] = {"spec": spec.to_dict(), "table": result.to_dict()}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
