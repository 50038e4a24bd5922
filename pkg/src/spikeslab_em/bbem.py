"""Bayesian-bootstrap ensemble of EM runs.

Each replicate draws a subset of L variables with probability proportional
to their marginal regression slope, reweights the observations with a
Dirichlet(1, ..., 1) draw, runs EM on that weighted sub-problem, and votes
for the variables it selects. The vote shares are the selection
frequencies ``phi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset, Standardization
from .em import EmConfig, HyperParams, run_em
from .posterior import WeightedDesign
from .rng import stream

log = logging.getLogger(__name__)

WEIGHT_SCALES = ("sum_to_n", "sum_to_1", "unit")
FREQUENCIES = ("replicates", "inclusions")


@dataclass(frozen=True)
class BootstrapConfig:
    """Ensemble settings.

    ``weight_scale="unit"`` replaces the Dirichlet draw by all-ones weights
    and exists for testing the reduction to plain EM.

    ``frequency`` picks the denominator of phi: ``"replicates"`` divides the
    votes by K; ``"inclusions"`` divides each variable's votes by the number
    of replicates whose subset contained it. With L much smaller than p the
    first caps phi_j at the inclusion rate of variable j.
    """

    K: int = 100
    L: Optional[int] = None
    seed: int = 0
    weight_scale: str = "sum_to_n"
    frequency: str = "replicates"

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be >= 1")
        if self.weight_scale not in WEIGHT_SCALES:
            raise ValueError(f"unknown weight_scale {self.weight_scale!r}")
        if self.frequency not in FREQUENCIES:
            raise ValueError(f"unknown frequency {self.frequency!r}")

    def subset_size(self, p: int) -> int:
        L = p if self.L is None else self.L
        if L > p:
            raise ValueError(f"L={L} exceeds p={p}")
        return L


@dataclass(frozen=True)
class Replicate:
    subset: np.ndarray
    gamma: np.ndarray
    m: np.ndarray
    converged: bool
    failed: bool = False
    error: str = ""


@dataclass
class EnsembleResult:
    phi: np.ndarray
    m_bar: np.ndarray
    replicates: list[Replicate] = field(default_factory=list)
    standardization: Optional[Standardization] = None
    inclusions: Optional[np.ndarray] = None  # per-variable count of subsets containing it

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.replicates)

    def selected(self, threshold: float = 0.5) -> np.ndarray:
        return (self.phi >= threshold).astype(int)


def marginal_weights(dataset: Dataset) -> np.ndarray:
    """Sampling probabilities proportional to |x_j'y| / x_j'x_j."""
    X, y = dataset.X, dataset.y
    norms = np.einsum("ij,ij->j", X, X)
    if np.any(norms <= 0):
        raise ValueError("zero-norm column in design")
    slopes = np.abs(X.T @ y) / norms
    total = slopes.sum()
    if total <= 0:
        # y orthogonal to every column: no marginal information, sample uniformly
        return np.full(dataset.p, 1.0 / dataset.p)
    return slopes / total


def draw_dirichlet_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    e = rng.standard_exponential(n)
    return e / e.sum()


def sample_subset(pi: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    """L distinct indices, drawn sequentially with renormalization over the rest."""
    pi = np.asarray(pi, dtype=float)
    if np.count_nonzero(pi > 0) < L:
        raise ValueError(f"fewer than L={L} variables have positive sampling weight")
    if L == pi.size:
        return np.arange(L)
    w = pi.copy()
    out = np.empty(L, dtype=int)
    for i in range(L):
        c = np.cumsum(w)
        j = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        j = min(j, w.size - 1)
        while w[j] <= 0:  # guard against landing on a zero-width cell at the edge
            j -= 1
        out[i] = j
        w[j] = 0.0
    return np.sort(out)


def _bootstrap_weights(n: int, scale: str, rng: np.random.Generator) -> Optional[np.ndarray]:
    if scale == "unit":
        return None
    w = draw_dirichlet_weights(n, rng)
    return w * n if scale == "sum_to_n" else w


def run_replicate(
    dataset: Dataset, pi: np.ndarray, hp: HyperParams, em_cfg: EmConfig, cfg: BootstrapConfig, k: int
) -> Replicate:
    p = dataset.p
    L = cfg.subset_size(p)
    rng = stream(cfg.seed, "bbem", k)
    subset = sample_subset(pi, L, rng)
    w = _bootstrap_weights(dataset.n, cfg.weight_scale, rng)
    gamma = np.zeros(p, dtype=int)
    m = np.zeros(p)
    try:
        X = dataset.X if L == p else dataset.X[:, subset]
        des = WeightedDesign(X, dataset.y, w)
        res = run_em(des, hp, em_cfg)
    except np.linalg.LinAlgError as exc:
        log.warning("replicate %d failed: %s", k, exc)
        return Replicate(subset, gamma, m, False, True, str(exc))
    gamma[subset] = res.gamma
    m[subset] = res.m
    return Replicate(subset, gamma, m, res.converged)


def aggregate(
    replicates: list[Replicate], p: int, standardization=None, frequency: str = "replicates"
) -> EnsembleResult:
    K = len(replicates)
    votes = np.zeros(p)
    m_bar = np.zeros(p)
    inc = np.zeros(p)
    for r in replicates:
        votes += r.gamma
        m_bar += r.m
        inc[r.subset] += 1
    if frequency == "inclusions":
        phi = np.divide(votes, inc, out=np.zeros(p), where=inc > 0)
    else:
        phi = votes / K
    return EnsembleResult(phi, m_bar / K, list(replicates), standardization, inc)


def run_bbem(
    dataset: Dataset,
    hp: HyperParams,
    em_cfg: Optional[EmConfig] = None,
    cfg: Optional[BootstrapConfig] = None,
    order: Optional[list[int]] = None,
    map_fn: Optional[Callable] = None,
) -> EnsembleResult:
    """Run K weighted, column-subsampled EM replicates and aggregate.

    ``order`` permutes execution order (results are keyed by replicate
    index, so it has no effect on the output); ``map_fn`` lets callers swap
    in a parallel map.
    """
    em_cfg = em_cfg or EmConfig()
    cfg = cfg or BootstrapConfig()
    pi = marginal_weights(dataset)
    ks = list(range(cfg.K)) if order is None else list(order)
    if sorted(ks) != list(range(cfg.K)):
        raise ValueError("order must be a permutation of range(K)")

    def one(k):
        return k, run_replicate(dataset, pi, hp, em_cfg, cfg, k)

    done = dict((map_fn or map)(one, ks))
    reps = [done[k] for k in range(cfg.K)]
    return aggregate(reps, dataset.p, dataset.standardization, cfg.frequency)


def predict(
    X_new: np.ndarray,
    m_bar: np.ndarray,
    phi: np.ndarray,
    standardization: Optional[Standardization] = None,
) -> np.ndarray:
    """X_new (m_bar * phi), plus the training response mean when known."""
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    coef = np.asarray(m_bar) * np.asarray(phi)
    if X_new.shape[1] != coef.size:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, expected {coef.size}")
    out = X_new @ coef
    if standardization is not None:
        out = out + standardization.y_mean
    return out
