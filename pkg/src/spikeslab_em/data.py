"""Regression datasets: CSV ingestion, standardization and simulation designs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .rng import stream


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Standardization:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float


@dataclass
class Dataset:
    """Design matrix plus response.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    column_names : list of str, optional
    standardization : Standardization, optional
        Transform that was applied to reach the stored ``X`` and ``y``.
    """

    X: np.ndarray
    y: np.ndarray
    column_names: Optional[list[str]] = None
    standardization: Optional[Standardization] = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise DataError("X must be two-dimensional")
        if self.y.ndim != 1 or self.y.shape[0] != self.X.shape[0]:
            raise DataError("y length does not match rows of X")
        if self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise DataError("need n >= 1 and p >= 1")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("non-finite entries in data")
        if self.column_names is not None and len(self.column_names) != self.X.shape[1]:
            raise DataError("column_names length does not match p")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        if self.column_names is not None:
            return list(self.column_names)
        return [f"x{j + 1}" for j in range(self.p)]

    def subset_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.column_names)

    def subset_columns(self, cols: np.ndarray) -> "Dataset":
        names = None
        if self.column_names is not None:
            names = [self.column_names[j] for j in cols]
        return Dataset(self.X[:, cols], self.y, names, self.standardization)


@dataclass
class SimulatedData:
    """A simulated dataset together with the truth that generated it."""

    dataset: Dataset
    beta: np.ndarray
    sigma: float
    gamma: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.gamma = (self.beta != 0).astype(int)


DESIGNS = ("tibshirani", "correlated", "large_p")


@dataclass(frozen=True)
class SimDesign:
    kind: str
    n: int
    p: Optional[int] = None
    sigma: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DESIGNS:
            raise ValueError(f"unknown design {self.kind!r}")
        fixed = {"tibshirani": 8, "correlated": 40}
        if self.kind in fixed:
            if self.p is not None and self.p != fixed[self.kind]:
                raise ValueError(f"design {self.kind} forces p={fixed[self.kind]}")
            object.__setattr__(self, "p", fixed[self.kind])
        elif self.p is None:
            object.__setattr__(self, "p", 1000)
        if self.sigma is None:
            default = {"tibshirani": 3.0, "correlated": 6.0, "large_p": math.sqrt(3.0)}
            object.__setattr__(self, "sigma", default[self.kind])
        if self.n < 2:
            raise ValueError("n must be >= 2")

    def generate(self, seed: Optional[int] = None) -> SimulatedData:
        s = self.seed if seed is None else seed
        if self.kind == "tibshirani":
            return gen_tibshirani(self.n, self.sigma, s)
        if self.kind == "correlated":
            return gen_correlated(self.n, s, sigma=self.sigma)
        return gen_large_p(self.n, self.p, s, sigma=self.sigma)


# ---------------------------------------------------------------------------
# standardization


def standardize(ds: Dataset) -> Dataset:
    """Center and scale columns of X (population sd) and center y."""
    x_mean = ds.X.mean(axis=0)
    Xc = ds.X - x_mean
    x_scale = np.sqrt(np.mean(Xc**2, axis=0))
    const = x_scale <= 1e-12 * np.maximum(1.0, np.abs(x_mean))
    if np.any(const):
        bad = [ds.names[j] for j in np.flatnonzero(const)]
        raise DataError(f"constant column(s) cannot be standardized: {bad}")
    y_mean = float(ds.y.mean())
    info = Standardization(x_mean, x_scale, y_mean)
    return Dataset(Xc / x_scale, ds.y - y_mean, ds.column_names, info)


def apply_standardization(X: np.ndarray, info: Standardization) -> np.ndarray:
    return (np.asarray(X, dtype=float) - info.x_mean) / info.x_scale


def unstandardize(ds: Dataset) -> Dataset:
    info = ds.standardization
    if info is None:
        return ds
    return Dataset(ds.X * info.x_scale + info.x_mean, ds.y + info.y_mean, ds.column_names)


# ---------------------------------------------------------------------------
# CSV


def load_csv(
    path: Union[str, Path], response: Union[str, int], standardize_data: bool = False
) -> Dataset:
    """Read a comma-separated file with a header row.

    ``response`` is a column name or a zero-based column index. Every other
    column must already be numeric.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty file")
    header = [h.strip() for h in rows[0]]
    if isinstance(response, str) and response not in header:
        if response.lstrip("-").isdigit():
            response = int(response)
        else:
            raise DataError(f"response column {response!r} absent")
    if isinstance(response, int):
        if not -len(header) <= response < len(header):
            raise DataError(f"response column index {response} absent")
        r = response % len(header)
    else:
        r = header.index(response)

    body = [row for row in rows[1:] if row]
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"row {i + 2} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric cell {cell!r} at row {i + 2}, column {header[j]!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise DataError("non-numeric cell (NA or infinite value)")
    keep = [j for j in range(len(header)) if j != r]
    ds = Dataset(values[:, keep], values[:, r], [header[j] for j in keep])
    return standardize(ds) if standardize_data else ds


def write_csv(ds: Dataset, path: Union[str, Path], response: str = "y") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names + [response])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def write_truth(sim: SimulatedData, path: Union[str, Path], names: Optional[Sequence[str]] = None) -> None:
    names = list(names) if names is not None else sim.dataset.names
    doc = {
        "columns": names,
        "beta": [float(b) for b in sim.beta],
        "gamma": [int(g) for g in sim.gamma],
        "sigma": float(sim.sigma),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# simulation designs


def ar1_gaussian(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    # x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j gives corr(x_i, x_j) = rho^|i-j|
    Z = rng.standard_normal((n, p))
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    s = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + s * Z[:, j]
    return X


def _respond(X: np.ndarray, beta: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return X @ beta + sigma * rng.standard_normal(X.shape[0])


def gen_tibshirani(n: int, sigma: float, seed: int) -> SimulatedData:
    """p=8, corr 0.5^|i-j|, y = 3x1 + 1.5x2 + 2x5 + N(0, sigma^2)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = stream(seed, "design", "tibshirani")
    X = ar1_gaussian(n, 8, 0.5, rng)
    beta = np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0])
    y = _respond(X, beta, sigma, rng)
    return SimulatedData(Dataset(X, y), beta, float(sigma))


def gen_correlated(n: int, seed: int, sigma: float = 6.0) -> SimulatedData:
    """p=40; two blocks of three signals with within-block corr 0.9."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = stream(seed, "design", "correlated")
    p = 40
    block = np.full((3, 3), 0.9)
    np.fill_diagonal(block, 1.0)
    L = np.linalg.cholesky(block)
    X = rng.standard_normal((n, p))
    X[:, 0:3] = X[:, 0:3] @ L.T
    X[:, 3:6] = X[:, 3:6] @ L.T
    beta = np.zeros(p)
    beta[:6] = [3.0, 3.0, -2.0, 3.0, 3.0, -2.0]
    y = _respond(X, beta, sigma, rng)
    return SimulatedData(Dataset(X, y), beta, float(sigma))


def gen_large_p(n: int, p: int, seed: int, sigma: float = math.sqrt(3.0)) -> SimulatedData:
    """corr 0.6^|i-j|, y = x1 + 2x2 + 3x3 + N(0, 3)."""
    if n < 2 or p < 3:
        raise ValueError("need n >= 2 and p >= 3")
    rng = stream(seed, "design", "large_p")
    X = ar1_gaussian(n, p, 0.6, rng)
    beta = np.zeros(p)
    beta[:3] = [1.0, 2.0, 3.0]
    y = _respond(X, beta, sigma, rng)
    return SimulatedData(Dataset(X, y), beta, float(sigma))
