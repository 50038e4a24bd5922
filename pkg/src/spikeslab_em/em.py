"""EM for the MAP model indicator under a continuous spike-and-slab prior.

The coefficients are the latent variable; the parameters are the inclusion
indicator ``gamma``, the noise variance ``sigma2`` and the prior inclusion
probability ``theta``. Each iteration runs a conditional M-step in the order
gamma, sigma2, theta, then refreshes the posterior of the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import betaln, gammaln

from .data import Dataset
from .posterior import (
    PosteriorMoments,
    PrecisionDiag,
    WeightedDesign,
    build_posterior,
    expected_rss,
    log_marginal,
    second_moments,
    update_posterior,
)
from .rng import stream

THETA_EPS = 1e-12


@dataclass(frozen=True)
class HyperParams:
    """Prior configuration.

    Defaults follow the non-informative recipe a0 = b0 = 1.1, nu = lambda = 1
    with the slab variance fixed at 100.
    """

    v0: float = 0.01
    v1: float = 100.0
    a0: float = 1.1
    b0: float = 1.1
    nu: float = 1.0
    lam: float = 1.0

    def __post_init__(self) -> None:
        if not self.v0 > 0:
            raise ValueError("v0 must be > 0")
        if not self.v1 > self.v0:
            raise ValueError("v0 must be < v1")
        for name in ("a0", "b0", "nu", "lam"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def with_v0(self, v0: float) -> "HyperParams":
        return HyperParams(v0, self.v1, self.a0, self.b0, self.nu, self.lam)


GammaInit = Union[str, np.ndarray]


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 100
    k0: int = 3
    theta_init: float = 0.5
    sigma2_init: float = 1.0
    gamma_init: GammaInit = "all_zeros"
    seed: int = 0
    track_objective: bool = True

    def __post_init__(self) -> None:
        if self.max_iter < 1 or self.k0 < 1:
            raise ValueError("max_iter and k0 must be positive")
        if self.k0 > self.max_iter:
            raise ValueError("k0 must not exceed max_iter")
        if not 0.0 < self.theta_init < 1.0:
            raise ValueError("theta_init must lie in (0, 1)")
        if not self.sigma2_init > 0:
            raise ValueError("sigma2_init must be > 0")
        if isinstance(self.gamma_init, str) and self.gamma_init not in ("all_ones", "all_zeros", "random"):
            raise ValueError(f"unknown gamma_init {self.gamma_init!r}")

    def initial_gamma(self, p: int) -> np.ndarray:
        g = self.gamma_init
        if isinstance(g, str):
            if g == "all_ones":
                return np.ones(p, dtype=np.int8)
            if g == "all_zeros":
                return np.zeros(p, dtype=np.int8)
            u = stream(self.seed, "gamma_init").random(p)
            return (u < self.theta_init).astype(np.int8)
        g = np.asarray(g).astype(np.int8)
        if g.shape != (p,) or not np.all((g == 0) | (g == 1)):
            raise ValueError("explicit gamma_init must be a binary vector of length p")
        return g.copy()


@dataclass(frozen=True)
class EmState:
    gamma: np.ndarray
    sigma2: float
    theta: float
    iter: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")


@dataclass(frozen=True)
class IterRecord:
    flips: int
    sigma2: float
    theta: float
    log_posterior: float
    gamma: np.ndarray


@dataclass
class EmResult:
    gamma: np.ndarray
    m: np.ndarray
    state: EmState
    converged: bool
    trace: list[IterRecord] = field(default_factory=list)
    initial_log_posterior: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def log_posterior_path(self) -> np.ndarray:
        return np.array([self.initial_log_posterior] + [r.log_posterior for r in self.trace])


# ---------------------------------------------------------------------------
# M-step pieces


def _threshold(sigma2: float, theta: float, hp: HyperParams) -> float:
    log_odds = math.log(theta / (1.0 - theta))
    return sigma2 * (math.log(hp.v1 / hp.v0) - 2.0 * log_odds) / (1.0 / hp.v0 - 1.0 / hp.v1)


def threshold_r(state: EmState, hp: HyperParams) -> float:
    """Inclusion threshold on E[beta_j^2]; may be negative."""
    return _threshold(state.sigma2, state.theta, hp)


def update_gamma(e2: np.ndarray, r: float) -> np.ndarray:
    # strict: a tie excludes the variable
    return (np.asarray(e2) > r).astype(np.int8)


def update_sigma2(erss: float, e2: np.ndarray, prec_new, n: int, p: int, hp: HyperParams) -> float:
    d = prec_new.d if isinstance(prec_new, PrecisionDiag) else np.asarray(prec_new)
    return (erss + float(np.sum(e2 / d)) + hp.nu * hp.lam) / (n + p + hp.nu)


def update_theta(gamma: np.ndarray, hp: HyperParams, p: int) -> float:
    theta = (float(np.sum(gamma)) + hp.a0 - 1.0) / (p + hp.a0 + hp.b0 - 2.0)
    return min(max(theta, THETA_EPS), 1.0 - THETA_EPS)


# ---------------------------------------------------------------------------
# objective


def log_prior(gamma: np.ndarray, sigma2: float, theta: float, hp: HyperParams) -> float:
    """log pi(gamma | theta) + log pi(theta) + log pi(sigma2).

    The inverse-gamma term is the density of log(sigma2), the scale on which
    the closed-form sigma2 update is the exact conditional maximizer.
    """
    k = float(np.sum(gamma))
    p = len(gamma)
    lt, l1t = math.log(theta), math.log1p(-theta)
    shape, rate = hp.nu / 2.0, hp.nu * hp.lam / 2.0
    return (
        k * lt
        + (p - k) * l1t
        + (hp.a0 - 1.0) * lt
        + (hp.b0 - 1.0) * l1t
        - betaln(hp.a0, hp.b0)
        + shape * math.log(rate)
        - gammaln(shape)
        - shape * math.log(sigma2)
        - rate / sigma2
    )


def log_posterior(
    des: WeightedDesign, moments: PosteriorMoments, gamma: np.ndarray, sigma2: float, theta: float, hp: HyperParams
) -> float:
    """Observed-data log posterior of (gamma, sigma2, theta), coefficients integrated out.

    ``moments`` must have been built for the prior variances implied by
    ``gamma``.
    """
    return log_marginal(des, moments, sigma2) + log_prior(gamma, sigma2, theta, hp)


# ---------------------------------------------------------------------------
# driver


def run_em(
    dataset: Union[Dataset, WeightedDesign],
    hp: HyperParams,
    cfg: Optional[EmConfig] = None,
    weights: Optional[np.ndarray] = None,
) -> EmResult:
    """Iterate E- and M-steps until gamma is unchanged for ``cfg.k0`` iterations."""
    cfg = cfg or EmConfig()
    des = dataset if isinstance(dataset, WeightedDesign) else WeightedDesign.from_dataset(dataset, weights)
    n, p = des.n, des.p
    des.gram  # cached for the trace term of the expected RSS

    gamma = cfg.initial_gamma(p)
    sigma2, theta = float(cfg.sigma2_init), float(cfg.theta_init)
    d = np.where(gamma == 1, hp.v1, hp.v0)
    mom = build_posterior(des, d)
    init_lp = log_posterior(des, mom, gamma, sigma2, theta, hp) if cfg.track_objective else float("nan")

    trace: list[IterRecord] = []
    stable = 0
    converged = False
    for _ in range(cfg.max_iter):
        e2 = second_moments(mom, sigma2)
        erss = expected_rss(des, mom, sigma2)
        new_gamma = update_gamma(e2, _threshold(sigma2, theta, hp))
        new_d = np.where(new_gamma == 1, hp.v1, hp.v0)
        sigma2 = update_sigma2(erss, e2, new_d, n, p, hp)
        theta = update_theta(new_gamma, hp, p)

        flipped = np.flatnonzero(new_gamma != gamma)
        mom = update_posterior(mom, flipped, new_d, des, overwrite=True)
        gamma = new_gamma

        lp = log_posterior(des, mom, gamma, sigma2, theta, hp) if cfg.track_objective else float("nan")
        trace.append(IterRecord(int(flipped.size), sigma2, theta, lp, gamma))
        stable = stable + 1 if (flipped.size == 0 and len(trace) > 1) else 1
        if stable >= cfg.k0:
            converged = True
            break

    state = EmState(gamma, sigma2, theta, len(trace))
    return EmResult(gamma.astype(int), mom.m.copy(), state, converged, trace, init_lp)
