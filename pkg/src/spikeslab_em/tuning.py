"""Choosing the spike variance v0: selection paths, BIC and k-fold CV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .bbem import BootstrapConfig, predict, run_bbem
from .data import Dataset, apply_standardization, standardize
from .em import EmConfig, HyperParams, run_em
from .rng import stream

ENGINES = ("em", "bbem")
CV_GRID = (0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01)
RSS_FLOOR = 1e-300


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class V0Grid:
    values: tuple[float, ...]
    scale: str = "log10"

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("grid must be nonempty")
        if any(v <= 0 for v in vals):
            raise ValueError("grid values must be positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be strictly increasing")
        if self.scale not in ("log10", "linear"):
            raise ValueError(f"unknown grid scale {self.scale!r}")

    @classmethod
    def log_spaced(cls, lo_exp: float, hi_exp: float, num: int) -> "V0Grid":
        return cls(tuple(10.0 ** np.linspace(lo_exp, hi_exp, num)), "log10")

    @classmethod
    def parse(cls, text: str) -> "V0Grid":
        """``"1e-4,1e-3,0.01"`` or ``"log:-4:0:17"``."""
        text = text.strip()
        if text.startswith("log:"):
            _, lo, hi, num = text.split(":")
            return cls.log_spaced(float(lo), float(hi), int(num))
        return cls(tuple(float(t) for t in text.split(",") if t.strip()), "linear")

    def check_against(self, hp: HyperParams) -> None:
        if max(self.values) >= hp.v1:
            raise ValueError("every grid value must be < v1")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class Fit:
    phi: np.ndarray
    m_bar: np.ndarray
    converged: bool
    failures: int = 0


def fit_engine(
    dataset: Dataset,
    hp: HyperParams,
    engine: str,
    em_cfg: Optional[EmConfig] = None,
    bb_cfg: Optional[BootstrapConfig] = None,
) -> Fit:
    em_cfg = em_cfg or EmConfig()
    if engine == "em":
        res = run_em(dataset, hp, em_cfg)
        return Fit(res.gamma.astype(float), res.m, res.converged)
    if engine == "bbem":
        ens = run_bbem(dataset, hp, em_cfg, bb_cfg or BootstrapConfig())
        conv = all(r.converged for r in ens.replicates)
        return Fit(ens.phi, ens.m_bar, conv, ens.n_failed)
    raise ValueError(f"unknown engine {engine!r}")


@dataclass
class PathResult:
    grid: V0Grid
    phi_matrix: np.ndarray  # p x G
    engine: str
    names: list[str] = field(default_factory=list)

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable"] + [repr(v) for v in self.grid.values])
        names = self.names or [f"x{j + 1}" for j in range(self.phi_matrix.shape[0])]
        for name, row in zip(names, self.phi_matrix):
            w.writerow([name] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def read_csv(cls, path: Union[str, Path], engine: str = "bbem") -> "PathResult":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        grid = V0Grid(tuple(float(v) for v in rows[0][1:]))
        names = [r[0] for r in rows[1:]]
        phi = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
        return cls(grid, phi, engine, names)


def selection_path(
    dataset: Dataset,
    hp: HyperParams,
    grid: V0Grid,
    engine: str = "bbem",
    em_cfg: Optional[EmConfig] = None,
    bb_cfg: Optional[BootstrapConfig] = None,
) -> PathResult:
    """phi (or binary gamma for EM) at every grid value, same seeds throughout."""
    grid.check_against(hp)
    cols = []
    for v0 in grid.values:
        try:
            cols.append(fit_engine(dataset, hp.with_v0(v0), engine, em_cfg, bb_cfg).phi)
        except np.linalg.LinAlgError as exc:
            raise TuningError(f"engine failed at v0={v0!r}: {exc}") from exc
    return PathResult(grid, np.column_stack(cols), engine, dataset.names)


def bic_score(dataset: Dataset, gamma: np.ndarray) -> float:
    """n log(RSS/n) + |gamma| log n for an OLS refit on the selected columns."""
    X = dataset.X - dataset.X.mean(axis=0)
    y = dataset.y - dataset.y.mean()
    n = dataset.n
    sel = np.flatnonzero(np.asarray(gamma))
    k = sel.size
    if k == 0:
        rss = float(y @ y)
    else:
        if k >= n:
            raise ValueError(f"selected model of size {k} is too large for n={n}")
        Xs = X[:, sel]
        coef, _, rank, _ = np.linalg.lstsq(Xs, y, rcond=None)
        if rank < k:
            raise ValueError("selected columns are rank deficient")
        r = y - Xs @ coef
        rss = float(r @ r)
    return n * math.log(max(rss, RSS_FLOOR) / n) + k * math.log(n)


@dataclass
class TuneResult:
    best_v0: float
    grid: V0Grid
    scores: np.ndarray
    criterion: str
    selections: Optional[np.ndarray] = None  # p x G, BIC only

    def to_dict(self) -> dict:
        out = {
            "criterion": self.criterion,
            "best_v0": self.best_v0,
            "grid": list(self.grid.values),
            "scores": [None if not math.isfinite(s) else float(s) for s in self.scores],
        }
        if self.selections is not None:
            out["selections"] = self.selections.T.astype(int).tolist()
        return out


def _argmin_smallest(grid: V0Grid, scores: np.ndarray) -> float:
    best = None
    for v0, s in zip(grid.values, scores):
        if math.isfinite(s) and (best is None or s < best[1]):
            best = (v0, s)
    if best is None:
        raise TuningError("every grid point failed")
    return best[0]


def tune_bic(
    dataset: Dataset,
    hp: HyperParams,
    grid: V0Grid,
    engine: str = "bbem",
    em_cfg: Optional[EmConfig] = None,
    bb_cfg: Optional[BootstrapConfig] = None,
    threshold: float = 0.5,
) -> TuneResult:
    grid.check_against(hp)
    scores = np.full(len(grid), np.inf)
    sels = np.zeros((dataset.p, len(grid)), dtype=int)
    for g, v0 in enumerate(grid.values):
        try:
            fit = fit_engine(dataset, hp.with_v0(v0), engine, em_cfg, bb_cfg)
            gamma = (fit.phi >= threshold).astype(int) if engine == "bbem" else fit.phi.astype(int)
            sels[:, g] = gamma
            scores[g] = bic_score(dataset, gamma)
        except (np.linalg.LinAlgError, ValueError):
            scores[g] = np.inf
    return TuneResult(_argmin_smallest(grid, scores), grid, scores, "bic", sels)


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Contiguous blocks of a seeded permutation."""
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and n >= folds")
    perm = stream(seed, "cv_folds").permutation(n)
    return [np.sort(b) for b in np.array_split(perm, folds)]


def cv_bootstrap_config(cfg: Optional[BootstrapConfig]) -> BootstrapConfig:
    cfg = cfg or BootstrapConfig()
    k = min(cfg.K, max(20, cfg.K // 2))
    return BootstrapConfig(k, cfg.L, cfg.seed, cfg.weight_scale, cfg.frequency)


def cv_rmse(
    dataset: Dataset,
    hp: HyperParams,
    folds: Sequence[np.ndarray],
    engine: str,
    em_cfg: Optional[EmConfig] = None,
    bb_cfg: Optional[BootstrapConfig] = None,
) -> float:
    n = dataset.n
    sq = 0.0
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        tr = standardize(dataset.subset_rows(train))
        fit = fit_engine(tr, hp, engine, em_cfg, bb_cfg)
        Xt = apply_standardization(dataset.X[test], tr.standardization)
        pred = predict(Xt, fit.m_bar, fit.phi, tr.standardization)
        sq += float(np.sum((dataset.y[test] - pred) ** 2))
    return math.sqrt(sq / n)


def tune_cv(
    dataset: Dataset,
    hp: HyperParams,
    grid: V0Grid,
    folds: int = 5,
    engine: str = "em",
    em_cfg: Optional[EmConfig] = None,
    bb_cfg: Optional[BootstrapConfig] = None,
    seed: int = 0,
) -> TuneResult:
    """k-fold CV RMSE of the m_bar * phi predictor at each grid value.

    Each fold is standardized on its own training rows. BBEM runs inside
    CV use a reduced replicate count (half of K, at least 20).
    """
    grid.check_against(hp)
    split = fold_assignment(dataset.n, folds, seed)
    bb = cv_bootstrap_config(bb_cfg) if engine == "bbem" else None
    scores = np.full(len(grid), np.inf)
    for g, v0 in enumerate(grid.values):
        try:
            scores[g] = cv_rmse(dataset, hp.with_v0(v0), split, engine, em_cfg, bb)
        except (np.linalg.LinAlgError, ValueError):
            scores[g] = np.inf
    return TuneResult(_argmin_smallest(grid, scores), grid, scores, "cv_rmse")
