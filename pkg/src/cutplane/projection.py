"""Projection maintenance: keep ``v`` multiplicatively close to ``w``.

The state caches ``Minv = (A^T V A)^{-1}`` and ``Q = A Minv A^T``. On each
weight update only the coordinates whose log-ratio left the band
``log(1 + eps)`` are reset to the target, and the caches are corrected with
one Woodbury update of that rank. Large batches or a numerically doubtful
inner system trigger a fresh factorization instead.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from .linalg import (
    Array,
    RankDeficiencyError,
    cholesky,
    neumann_terms,
    preconditioned_inverse_apply,
    weighted_gram,
)

log = logging.getLogger(__name__)


class ProjectionState:
    """Mutable single-writer state; see module docstring."""

    def __init__(
        self,
        A: Array,
        w: Array,
        eps: float,
        *,
        refactor_fraction: float = 0.25,
        refresh_every: int = 64,
        cond_limit: float = 1e10,
    ) -> None:
        if not 0.0 <= eps < 1.0:
            raise ValueError("eps must lie in [0, 1)")
        self.eps = float(eps)
        self.refactor_fraction = refactor_fraction
        self.refresh_every = refresh_every
        self.cond_limit = cond_limit
        self.A = np.array(A, dtype=np.float64)
        w = np.array(w, dtype=np.float64)
        if w.shape != (self.A.shape[0],) or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and match the row count")
        self.w = w
        self.v = w.copy()
        self.woodbury_count = 0
        self.refactor_count = 0
        self.last_drift: NDArray[np.intp] = np.zeros(0, dtype=np.intp)
        self._refactor()

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def Q2(self) -> Array:
        """Entry-wise square of ``Q``, built on first use after a change."""
        if self._Q2 is None:
            self._Q2 = self.Q * self.Q
        return self._Q2

    def tau(self) -> Array:
        return np.diag(self.Q).copy()

    def _refactor(self) -> None:
        M = weighted_gram(self.A, self.v)
        L = cholesky(M)
        Minv = sla.cho_solve((L, True), np.eye(self.n), check_finite=False)
        self.Minv = 0.5 * (Minv + Minv.T)
        B = sla.solve_triangular(L, self.A.T, lower=True, check_finite=False)
        Q = B.T @ B
        self.Q = 0.5 * (Q + Q.T)
        self._Q2: Array | None = None
        self._since_refactor = 0
        self.refactor_count += 1

    def _drifted(self, w_new: Array) -> NDArray[np.intp]:
        band = math.log1p(self.eps)
        gap = np.abs(np.log(w_new) - np.log(self.v))
        # A hair of slack keeps exact-boundary cases inside the band.
        return np.flatnonzero(gap > band * (1.0 - 1e-12))

    def update(self, w_new: Array) -> tuple[Array, Array, Array]:
        """Move the target to ``w_new``; returns ``(v, Minv, Q)``."""
        w_new = np.asarray(w_new, dtype=np.float64)
        if w_new.shape != self.w.shape:
            raise ValueError(f"w_new has shape {w_new.shape}, expected {self.w.shape}")
        if np.any(w_new <= 0) or not np.all(np.isfinite(w_new)):
            raise ValueError("w_new must be positive and finite")
        self.w = w_new.copy()
        S = self._drifted(w_new)
        self.last_drift = S
        if S.size == 0:
            return self.v, self.Minv, self.Q
        delta = w_new[S] - self.v[S]
        self.v[S] = w_new[S]
        if S.size > self.refactor_fraction * self.n or self._since_refactor >= self.refresh_every:
            self._refactor()
        elif not self._woodbury(S, delta):
            self._refactor()
        return self.v, self.Minv, self.Q

    def _woodbury(self, S: NDArray[np.intp], delta: Array) -> bool:
        # (M + A_S^T D A_S)^{-1} = Minv - Minv A_S^T (I + D A_S Minv A_S^T)^{-1} D A_S Minv
        AS = self.A[S]
        G = self.Minv @ AS.T
        K = np.eye(S.size) + delta[:, None] * (AS @ G)
        try:
            if np.linalg.cond(K) > self.cond_limit:
                return False
            X = np.linalg.solve(K, delta[:, None] * G.T)
        except np.linalg.LinAlgError:
            return False
        Minv = self.Minv - G @ X
        QS = self.Q[:, S]
        Y = np.linalg.solve(K, delta[:, None] * QS.T)
        Q = self.Q - QS @ Y
        self.Minv = 0.5 * (Minv + Minv.T)
        self.Q = 0.5 * (Q + Q.T)
        self._Q2 = None
        self._since_refactor += 1
        self.woodbury_count += 1
        return True

    def insert(self, a: Array, w_a: float) -> None:
        """Append a row with weight ``w_a`` (``v`` gets the exact weight)."""
        a = np.asarray(a, dtype=np.float64).reshape(self.n)
        if not w_a > 0:
            raise ValueError("inserted weight must be positive")
        u = self.Minv @ a
        d = 1.0 + w_a * float(a @ u)
        Au = self.A @ u
        Minv = self.Minv - (w_a / d) * np.outer(u, u)
        Qold = self.Q - (w_a / d) * np.outer(Au, Au)
        col = Au / d
        corner = float(a @ u) / d
        m = self.m
        Q = np.empty((m + 1, m + 1))
        Q[:m, :m] = Qold
        Q[:m, m] = col
        Q[m, :m] = col
        Q[m, m] = corner
        self.A = np.vstack([self.A, a])
        self.w = np.append(self.w, w_a)
        self.v = np.append(self.v, w_a)
        self.Minv = 0.5 * (Minv + Minv.T)
        self.Q = Q
        self._Q2 = None
        self._since_refactor += 1

    def delete(self, index: int) -> None:
        """Remove row ``index``."""
        if not 0 <= index < self.m:
            raise IndexError(f"row {index} out of range for {self.m} rows")
        if self.m - 1 < self.n:
            raise RankDeficiencyError("deleting this row would leave fewer rows than columns")
        vi = self.v[index]
        q = self.Q[:, index].copy()
        denom = 1.0 - vi * q[index]
        keep = np.ones(self.m, dtype=bool)
        keep[index] = False
        if denom <= 1e-10:
            raise RankDeficiencyError("row carries the full weight of some direction")
        a = self.A[index]
        u = self.Minv @ a
        Minv = self.Minv + (vi / denom) * np.outer(u, u)
        Q = self.Q + (vi / denom) * np.outer(q, q)
        self.A = self.A[keep]
        self.w = self.w[keep]
        self.v = self.v[keep]
        self.Minv = 0.5 * (Minv + Minv.T)
        Q = Q[np.ix_(keep, keep)]
        self.Q = 0.5 * (Q + Q.T)
        self._Q2 = None
        self._since_refactor += 1

    def sandwich_holds(self) -> bool:
        lo = (1.0 - self.eps) * self.v
        hi = (1.0 + self.eps) * self.v
        tol = 1e-12 * self.v
        return bool(np.all(lo - tol <= self.w) and np.all(self.w <= hi + tol))

    def inverse_apply(self, B: Array, weights: Array | None = None, tol: float = 1e-13) -> Array:
        """``(A^T diag(weights) A)^{-1} B`` preconditioned by the cached ``Minv``.

        ``weights`` defaults to the current target ``w``. The spectral ratio
        between the two Gram matrices is bounded from the weight ratios, and
        the Neumann series is run to relative accuracy ``tol``.
        """
        target = self.w if weights is None else np.asarray(weights, dtype=np.float64)
        return precondition_solve(self.A, self.v, self.Minv, target, B, tol=tol)


def gram_sandwich(A: Array, u: Array, Minv_u: Array, w: Array) -> tuple[float, float]:
    """Constants ``lo, hi`` with ``lo M(u) <= M(w) <= hi M(u)``.

    Rows shared by both weight vectors contribute their weight ratio. Rows
    present only in ``w`` (or only in ``u``) are charged through their
    unnormalized leverage under ``u``, so the bound stays valid across row
    inserts and deletes. ``lo`` may come out non-positive, meaning no useful
    lower bound is available.
    """
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    both = (u > 0) & (w > 0)
    added = (u <= 0) & (w > 0)
    removed = (u > 0) & (w <= 0)
    ratio = w[both] / u[both]
    r_lo = float(ratio.min()) if ratio.size else 1.0
    r_hi = float(ratio.max()) if ratio.size else 1.0
    extra = 0.0
    if added.any():
        Aa = A[added]
        extra = float(np.sum(w[added] * np.einsum("ij,jk,ik->i", Aa, Minv_u, Aa)))
    lost = 0.0
    if removed.any():
        Ar = A[removed]
        lost = float(np.sum(u[removed] * np.einsum("ij,jk,ik->i", Ar, Minv_u, Ar)))
    return r_lo * (1.0 - lost), r_hi + extra


def precondition_solve(
    A: Array,
    u: Array,
    Minv_u: Array,
    w: Array,
    B: Array,
    *,
    tol: float = 1e-13,
    max_terms: int = 200,
) -> Array:
    """Solve ``M(w) X = B`` using ``M(u)^{-1}`` as a preconditioner.

    Falls back to a direct Cholesky solve when the spectral ratio is so wide
    that the series would need more than ``max_terms`` terms.
    """
    lo, hi = gram_sandwich(A, u, Minv_u, w)
    Mt = weighted_gram(A, w)
    if lo > 0:
        kappa = max(hi / lo, 1.0)
        t = neumann_terms(kappa, tol)
        if t <= max_terms:
            X = preconditioned_inverse_apply(Minv_u / lo, Mt, kappa, t, B)
            # The series under-estimates by at most a (1 - err) factor; one
            # refinement sweep removes the residual cheaply.
            R = B - Mt @ X
            return X + preconditioned_inverse_apply(Minv_u / lo, Mt, kappa, t, R)
    L = cholesky(Mt)
    return sla.cho_solve((L, True), B, check_finite=False)
