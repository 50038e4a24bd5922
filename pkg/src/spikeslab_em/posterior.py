"""Gaussian posterior of the coefficients given the model indicator.

With prior beta_j ~ N(0, sigma^2 d_j) and observation weights w, the
posterior is N(m, sigma^2 V) where

    V = (X' W X + D^-1)^-1,    m = V X' W y.

``V`` is formed directly when p <= n and through the Woodbury identity on
an n x n system otherwise. When only a few d_j change between iterations
the rank-l refresh in :func:`update_posterior` avoids refactoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.linalg import blas

from .data import Dataset

log = logging.getLogger(__name__)

MAX_INCREMENTAL_UPDATES = 50


class PosteriorError(np.linalg.LinAlgError):
    """Factorization of a posterior system failed."""


@dataclass(frozen=True)
class PrecisionDiag:
    """Prior variance scale d_j = v1 if gamma_j else v0."""

    d: np.ndarray
    v0: float
    v1: float

    @classmethod
    def from_gamma(cls, gamma: np.ndarray, v0: float, v1: float) -> "PrecisionDiag":
        if not v1 > v0 > 0:
            raise ValueError("need v1 > v0 > 0")
        g = np.asarray(gamma).astype(bool)
        return cls(np.where(g, float(v1), float(v0)), float(v0), float(v1))


@dataclass(frozen=True)
class PosteriorMoments:
    m: np.ndarray
    V: np.ndarray
    d: np.ndarray
    logdet_V: float
    flips_since_refactor: int = 0
    updates_since_refactor: int = 0


class WeightedDesign:
    """Row-weighted view of a dataset with the cached products EM reuses.

    Rows are scaled by sqrt(w) so every weighted quantity becomes an
    unweighted one on ``Xs``, ``ys``.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        if weights is None:
            w = np.ones(n)
            self.weighted = False
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,):
                raise ValueError("weights must have length n")
            if not np.all(w > 0):
                raise ValueError("weights must be strictly positive")
            self.weighted = True
        self.X, self.y, self.w = X, y, w
        sw = np.sqrt(w)
        self.Xs = X * sw[:, None]
        self.ys = y * sw
        self.b = self.Xs.T @ self.ys
        self.yy = float(self.ys @ self.ys)
        self.sum_log_w = float(np.sum(np.log(w)))
        self._gram = None

    @classmethod
    def from_dataset(cls, ds: Dataset, weights: Optional[np.ndarray] = None) -> "WeightedDesign":
        return cls(ds.X, ds.y, weights)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.Xs.T @ self.Xs
        return self._gram

    def refresh_budget(self) -> float:
        return min(self.n, self.p) / 2.0


def _as_design(dataset, weights) -> WeightedDesign:
    if isinstance(dataset, WeightedDesign):
        return dataset
    return WeightedDesign.from_dataset(dataset, weights)


def _d_of(prec) -> np.ndarray:
    return np.asarray(prec.d if isinstance(prec, PrecisionDiag) else prec, dtype=float)


def build_posterior(dataset, prec, weights: Optional[np.ndarray] = None) -> PosteriorMoments:
    """Form ``m`` and ``V`` from scratch.

    ``dataset`` may be a :class:`Dataset` or a prepared :class:`WeightedDesign`;
    ``prec`` a :class:`PrecisionDiag` or the raw vector of d_j.
    """
    des = _as_design(dataset, weights)
    d = _d_of(prec)
    if d.shape != (des.p,) or not np.all(d > 0):
        raise ValueError("prior variances must be a positive vector of length p")
    try:
        if des.p <= des.n:
            P = des.gram + np.diag(1.0 / d)
            L = linalg.cholesky(P, lower=True, check_finite=False)
            Linv = linalg.solve_triangular(L, np.eye(des.p), lower=True, check_finite=False)
            V = Linv.T @ Linv
            logdet_V = -2.0 * float(np.sum(np.log(np.diag(L))))
        else:
            B = des.Xs * d  # n x p, = Xs D
            M = B @ des.Xs.T
            M[np.diag_indices_from(M)] += 1.0
            L = linalg.cholesky(M, lower=True, check_finite=False)
            T = linalg.solve_triangular(L, B, lower=True, check_finite=False)
            V = -(T.T @ T)
            V[np.diag_indices_from(V)] += d
            logdet_V = float(np.sum(np.log(d))) - 2.0 * float(np.sum(np.log(np.diag(L))))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise PosteriorError(f"posterior factorization failed: {exc}") from exc
    m = V @ des.b
    return PosteriorMoments(m, V, d.copy(), logdet_V)


def update_posterior(
    prev: PosteriorMoments,
    flipped,
    new_d,
    dataset,
    weights: Optional[np.ndarray] = None,
    refresh: bool = True,
    overwrite: bool = False,
) -> PosteriorMoments:
    """Refresh ``V`` after the prior variances at ``flipped`` change.

    ``new_d`` is either the full new vector of d_j or the values at the
    flipped indices only. Falls back to :func:`build_posterior` once the
    refresh budget is spent (unless ``refresh`` is False) or if the inner
    system is singular.

    With ``overwrite=True`` the rank-l correction is applied to ``prev.V``
    in place (one BLAS pass, no p x p temporaries); ``prev`` must not be
    used afterwards.
    """
    idx = np.asarray(flipped, dtype=int).ravel()
    if idx.size == 0:
        return prev
    if np.unique(idx).size != idx.size:
        raise ValueError("flipped indices must be distinct")
    des = _as_design(dataset, weights)
    new_d = np.asarray(new_d, dtype=float)
    d = prev.d.copy()
    d[idx] = new_d[idx] if new_d.shape == d.shape else new_d
    if np.any(d[idx] <= 0):
        raise ValueError("prior variances must be positive")
    idx = idx[d[idx] != prev.d[idx]]
    if idx.size == 0:
        return prev

    flips = prev.flips_since_refactor + idx.size
    if refresh and (
        flips > des.refresh_budget() or prev.updates_since_refactor + 1 > MAX_INCREMENTAL_UPDATES
    ):
        return build_posterior(des, d)

    # V_new = (V^-1 + U A U')^-1 with A the change in D^-1 on the flipped block
    a = 1.0 / d[idx] - 1.0 / prev.d[idx]
    VU = 0.5 * (prev.V[:, idx] + prev.V[idx, :].T)
    VUU = VU[idx, :]
    VUU = 0.5 * (VUU + VUU.T)
    try:
        # S = A^-1 + U'VU is symmetric but indefinite; S^-1 = Q diag(1/lam) Q'
        lam, Q = np.linalg.eigh(np.diag(1.0 / a) + VUU)
        if np.min(np.abs(lam)) <= 1e-12 * np.max(np.abs(lam)):
            raise np.linalg.LinAlgError("inner system singular")
        sign, logdet_lemma = np.linalg.slogdet(np.eye(idx.size) + a[:, None] * VUU)
        if sign <= 0:
            raise np.linalg.LinAlgError("inner system not positive")
        Z = (VU @ Q) / np.sqrt(np.abs(lam))
        s = np.sign(lam)
        if not np.all(np.isfinite(Z)):
            raise np.linalg.LinAlgError("non-finite refresh")
    except np.linalg.LinAlgError as exc:
        log.warning("rank-%d refresh failed (%s); rebuilding posterior", idx.size, exc)
        return build_posterior(des, d)
    V = _rank_update(prev.V, Z, s, overwrite)
    m = prev.m - Z @ (s * (Z.T @ des.b))
    return PosteriorMoments(
        m,
        V,
        d,
        prev.logdet_V - float(logdet_lemma),
        flips,
        prev.updates_since_refactor + 1,
    )


def _rank_update(V: np.ndarray, Z: np.ndarray, s: np.ndarray, overwrite: bool) -> np.ndarray:
    """V - Z diag(s) Z' with s = +-1, as one dgemm.

    Scaling by +-1 is exact, so entries (i, j) and (j, i) see identical
    products and the update keeps V exactly symmetric. V's C-ordered buffer
    is the Fortran-ordered V' = V that BLAS updates in place.
    """
    Vf = V.T if (overwrite and V.flags.c_contiguous and V.flags.writeable) else np.array(V.T, order="F")
    out = blas.dgemm(-1.0, Z * s, Z.T, 1.0, Vf, overwrite_c=True)
    return out.T


def expected_rss(dataset, moments: PosteriorMoments, sigma2: float, weights: Optional[np.ndarray] = None) -> float:
    """E||y - X beta||^2_w = sigma^2 tr(W X V X') + (y - Xm)' W (y - Xm)."""
    des = _as_design(dataset, weights)
    r = des.ys - des.Xs @ moments.m
    if des._gram is not None:
        tr = float(np.sum(moments.V * des._gram))
    else:
        # row-wise x_i' V x_i, never forming the n x n product
        tr = float(np.sum((des.Xs @ moments.V) * des.Xs))
    return max(sigma2 * tr + float(r @ r), 0.0)


def second_moments(moments: PosteriorMoments, sigma2: float) -> np.ndarray:
    """E[beta_j^2] = sigma^2 V_jj + m_j^2 for every j."""
    return sigma2 * np.diag(moments.V) + moments.m**2


def quad_form(des: WeightedDesign, moments: PosteriorMoments) -> float:
    """ys' (I + Xs D Xs')^-1 ys, which equals ys'ys - b'm."""
    return des.yy - float(des.b @ moments.m)


def log_marginal(des: WeightedDesign, moments: PosteriorMoments, sigma2: float) -> float:
    """log p(y | d, sigma^2) under the weighted Gaussian likelihood.

    Uses det(I + Xs D Xs') = det(D) / det(V).
    """
    n = des.n
    logdet = float(np.sum(np.log(moments.d))) - moments.logdet_V
    return (
        -0.5 * n * np.log(2.0 * np.pi * sigma2)
        + 0.5 * des.sum_log_w
        - 0.5 * logdet
        - 0.5 * quad_form(des, moments) / sigma2
    )
