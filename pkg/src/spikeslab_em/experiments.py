"""Simulation studies: repeated draws from a design, per-replicate tuning,
and summary tables in the layouts of the published benchmark tables."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Union

import numpy as np

from .bbem import BootstrapConfig
from .data import SimDesign, standardize
from .em import EmConfig, HyperParams
from .rng import stream
from .tuning import CV_GRID, TuningError, V0Grid, fit_engine, tune_bic, tune_cv

METHODS = ("em", "bbem")
TUNERS = ("fixed", "bic", "cv")
STYLES = ("zeros", "counts", "means")
DEFAULT_STYLE = {"tibshirani": "zeros", "correlated": "counts", "large_p": "means"}
MAX_FAILURE_RATE = 0.10


class ExperimentError(RuntimeError):
    pass


def default_theta_init(n: int, p: int) -> float:
    return math.sqrt(n) / p if p > n else 0.5


@dataclass(frozen=True)
class ExperimentSpec:
    design: SimDesign
    replicates: int = 100
    method: str = "em"
    tuner: str = "cv"
    v0: Optional[float] = None
    seed: int = 0
    grid: Optional[V0Grid] = None
    folds: int = 5
    K: int = 100
    L: Optional[int] = None
    threshold: float = 0.5
    theta_init: Optional[float] = None
    weight_scale: str = "sum_to_n"
    frequency: str = "replicates"
    style: Optional[str] = None
    hp: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.tuner not in TUNERS:
            raise ValueError(f"unknown tuner {self.tuner!r}")
        if self.tuner == "fixed" and self.v0 is None:
            raise ValueError("tuner=fixed requires v0")
        if self.style is not None and self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")

    @property
    def table_style(self) -> str:
        return self.style or DEFAULT_STYLE[self.design.kind]

    def v0_grid(self) -> V0Grid:
        return self.grid or V0Grid(CV_GRID)

    def em_config(self) -> EmConfig:
        theta = self.theta_init
        if theta is None:
            theta = default_theta_init(self.design.n, self.design.p)
        return EmConfig(theta_init=theta)

    def to_dict(self) -> dict:
        d = self.design
        return {
            "design": {"kind": d.kind, "n": d.n, "p": d.p, "sigma": d.sigma},
            "replicates": self.replicates,
            "method": self.method,
            "tuner": self.tuner,
            "v0": self.v0,
            "seed": self.seed,
            "grid": list(self.v0_grid().values),
            "folds": self.folds,
            "K": self.K,
            "L": self.L,
            "threshold": self.threshold,
            "theta_init": self.em_config().theta_init,
            "weight_scale": self.weight_scale,
            "frequency": self.frequency,
            "style": self.table_style,
            "hyper": {k: getattr(self.hp, k) for k in ("v1", "a0", "b0", "nu", "lam")},
        }


@dataclass
class ReplicateOutcome:
    selected: Optional[np.ndarray]
    v0: float
    error: str = ""


def replicate_seed(seed: int, r: int) -> int:
    return int(stream(seed, "replicate", r).integers(2**63))


def run_replicate(spec: ExperimentSpec, r: int) -> ReplicateOutcome:
    s = replicate_seed(spec.seed, r)
    sim = spec.design.generate(s)
    ds = standardize(sim.dataset)
    em_cfg = spec.em_config()
    bb_cfg = BootstrapConfig(spec.K, spec.L, s, spec.weight_scale, spec.frequency)
    grid = spec.v0_grid()
    try:
        if spec.tuner == "fixed":
            v0 = float(spec.v0)
        elif spec.tuner == "bic":
            tr = tune_bic(ds, spec.hp, grid, spec.method, em_cfg, bb_cfg, spec.threshold)
            g = grid.values.index(tr.best_v0)
            return ReplicateOutcome(tr.selections[:, g].copy(), tr.best_v0)
        else:
            v0 = tune_cv(sim.dataset, spec.hp, grid, spec.folds, spec.method, em_cfg, bb_cfg, seed=s).best_v0
        fit = fit_engine(ds, spec.hp.with_v0(v0), spec.method, em_cfg, bb_cfg)
    except (np.linalg.LinAlgError, TuningError) as exc:
        return ReplicateOutcome(None, float("nan"), str(exc))
    sel = (fit.phi >= spec.threshold) if spec.method == "bbem" else (fit.phi > 0.5)
    return ReplicateOutcome(sel.astype(int), v0)


@dataclass
class SummaryTable:
    """Per-replicate selections plus the class statistics derived from them.

    Counts in the min/median/max layout are percentages of replicates, so
    runs with fewer than 100 replicates stay comparable to published rows.
    """

    selected: np.ndarray  # replicates x p
    truth: np.ndarray
    style: str
    v0: np.ndarray
    failures: int = 0
    wall_clock: float = 0.0
    label: str = ""

    @property
    def replicates(self) -> int:
        return self.selected.shape[0]

    @property
    def signal(self) -> np.ndarray:
        return np.flatnonzero(self.truth)

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.truth == 0)

    def counts(self) -> np.ndarray:
        return self.selected.sum(axis=0)

    def stats(self) -> dict:
        R = self.replicates
        pct = self.counts() * 100.0 / R
        out = {}
        for cls, idx in (("signal", self.signal), ("noise", self.noise)):
            sel = self.selected[:, idx]
            out[f"{cls}_zero_mean"] = float(np.mean(idx.size - sel.sum(axis=1)))
            out[f"{cls}_mean"] = float(np.mean(sel.sum(axis=1)))
            out[f"{cls}_min"] = float(np.min(pct[idx]))
            out[f"{cls}_median"] = float(np.median(pct[idx]))
            out[f"{cls}_max"] = float(np.max(pct[idx]))
        return out

    def columns(self) -> list[str]:
        if self.style == "zeros":
            return ["noise_zero_mean", "signal_zero_mean"]
        if self.style == "counts":
            return ["signal_min", "signal_median", "signal_max", "noise_min", "noise_median", "noise_max"]
        return ["signal_mean", "noise_mean"]

    def to_dict(self) -> dict:
        st = self.stats()
        return {
            "label": self.label,
            "style": self.style,
            "replicates": self.replicates,
            "failures": self.failures,
            "stats": {k: st[k] for k in self.columns()},
            "all_stats": st,
            "selection_counts": self.counts().astype(int).tolist(),
            "v0": [None if not math.isfinite(v) else float(v) for v in self.v0],
        }

    def to_text(self) -> str:
        cols = self.columns()
        st = self.stats()
        head = ["method"] + cols
        row = [self.label or "-"] + [f"{st[c]:.2f}" for c in cols]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        line = lambda xs: "  ".join(x.rjust(w) for x, w in zip(xs, widths))  # noqa: E731
        return line(head) + "\n" + line(row) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        st = self.stats()
        w.writerow(["method"] + self.columns())
        w.writerow([self.label] + [repr(st[c]) for c in self.columns()])
        return buf.getvalue()


def run_experiment(spec: ExperimentSpec, jobs: int = 1, label: str = "") -> SummaryTable:
    """Generate ``spec.replicates`` datasets, fit each, and tabulate selections."""
    t0 = time.perf_counter()
    if jobs > 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=jobs)(delayed(run_replicate)(spec, r) for r in range(spec.replicates))
    else:
        outcomes = [run_replicate(spec, r) for r in range(spec.replicates)]
    failed = [o for o in outcomes if o.selected is None]
    if len(failed) > MAX_FAILURE_RATE * spec.replicates:
        raise ExperimentError(f"{len(failed)} of {spec.replicates} replicates failed: {failed[0].error}")
    ok = [o for o in outcomes if o.selected is not None]
    truth = spec.design.generate(0).gamma
    return SummaryTable(
        np.array([o.selected for o in ok]),
        truth,
        spec.table_style,
        np.array([o.v0 for o in outcomes]),
        len(failed),
        time.perf_counter() - t0,
        label or f"{spec.method.upper()} ({spec.tuner})",
    )


# ---------------------------------------------------------------------------
# published reference rows


@lru_cache(maxsize=1)
def reference_rows() -> dict:
    text = resources.files("spikeslab_em").joinpath("data_files/reference_tables.json").read_text("utf-8")
    return json.loads(text)["rows"]


@dataclass
class CellCheck:
    cell: str
    observed: float
    reference: float
    tolerance: float

    @property
    def deviation(self) -> float:
        return self.observed - self.reference

    @property
    def passed(self) -> bool:
        return abs(self.deviation) <= self.tolerance


@dataclass
class ComparisonReport:
    reference: str
    citation: str
    cells: list[CellCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cells)

    def to_text(self) -> str:
        lines = [f"{self.reference} ({self.citation})"]
        for c in self.cells:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(
                f"  {c.cell:18s} observed {c.observed:8.3f}  reference {c.reference:8.3f}"
                f"  dev {c.deviation:+8.3f}  tol {c.tolerance:g}  {mark}"
            )
        return "\n".join(lines) + "\n"


def compare_to_reference(
    table: SummaryTable, reference: str, tolerance: Union[float, dict[str, float]]
) -> ComparisonReport:
    rows = reference_rows()
    if reference not in rows:
        raise KeyError(f"unknown reference row {reference!r}; known: {sorted(rows)}")
    row = rows[reference]
    st = table.stats()
    cells = []
    for cell, ref in row["values"].items():
        tol = tolerance.get(cell, math.inf) if isinstance(tolerance, dict) else float(tolerance)
        cells.append(CellCheck(cell, st[cell], float(ref), tol))
    return ComparisonReport(reference, row["citation"], cells)
