"""Dense kernels for weighted Gram matrices and leverage scores.

Everything here is a pure function of its inputs. The operators follow the
usual conventions for a constraint matrix ``A`` (m x n, one row per
constraint) and a positive weight vector ``w``:

    M(w) = A^T W A
    Q(w) = A M(w)^{-1} A^T
    P(w) = W^{1/2} Q(w) W^{1/2}
    tau(w) = diag(Q(w)),  sigma(w) = w * tau(w)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

Array = NDArray[np.float64]


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when a Gram matrix is not numerically positive definite."""


class SingularUpdateError(np.linalg.LinAlgError):
    """Raised when the inner system of a Woodbury update is singular."""


def _as_matrix(A: Array) -> Array:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def _check_weights(A: Array, w: Array, *, allow_zero: bool = False) -> Array:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (A.shape[0],):
        raise ValueError(f"weights have shape {w.shape}, expected ({A.shape[0]},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if allow_zero:
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    elif np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    return w


@dataclass
class GramFactor:
    """``M = A^T W A`` together with its lower Cholesky factor."""

    M: Array
    L: Array
    _inv: Array | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def solve(self, B: Array) -> Array:
        return sla.cho_solve((self.L, True), B, check_finite=False)

    def half_solve(self, B: Array) -> Array:
        """Return ``L^{-1} B``."""
        return sla.solve_triangular(self.L, B, lower=True, check_finite=False)

    def inverse(self) -> Array:
        if self._inv is None:
            inv = self.solve(np.eye(self.n))
            self._inv = 0.5 * (inv + inv.T)
        return self._inv

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def cholesky(M: Array) -> Array:
    """Lower Cholesky factor, raising :class:`RankDeficiencyError` on failure."""
    M = np.asarray(M, dtype=np.float64)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"matrix is not positive definite: {exc}") from exc
    d = np.diag(L)
    if not np.all(np.isfinite(L)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise RankDeficiencyError("matrix is numerically rank deficient")
    return L


def weighted_gram(A: Array, w: Array) -> Array:
    """``A^T diag(w) A`` with zero weights permitted, symmetrized."""
    M = A.T @ (w[:, None] * A)
    return 0.5 * (M + M.T)


def gram(A: Array, w: Array, *, allow_zero: bool = False) -> GramFactor:
    """Form ``A^T W A`` and factor it.

    Zero weights are accepted with ``allow_zero`` (rows that are absent from
    the current constraint set); the Gram matrix must still be definite.
    """
    A = _as_matrix(A)
    w = _check_weights(A, w, allow_zero=allow_zero)
    M = weighted_gram(A, w)
    return GramFactor(M=M, L=cholesky(M))


def unnormalized_leverage_exact(A: Array, w: Array, *, allow_zero: bool = False) -> Array:
    """``tau(w)_i = a_i^T (A^T W A)^{-1} a_i``."""
    A = _as_matrix(A)
    F = gram(A, w, allow_zero=allow_zero)
    B = F.half_solve(A.T)
    return np.einsum("ij,ij->j", B, B)


def leverage_scores_exact(A: Array, w: Array, *, allow_zero: bool = False) -> Array:
    """``sigma(w)_i = w_i a_i^T (A^T W A)^{-1} a_i``; sums to ``n``."""
    w = np.asarray(w, dtype=np.float64)
    return w * unnormalized_leverage_exact(A, w, allow_zero=allow_zero)


def q_matrix(A: Array, w: Array, *, allow_zero: bool = False) -> Array:
    """``Q(w) = A (A^T W A)^{-1} A^T`` as a dense m x m matrix."""
    A = _as_matrix(A)
    F = gram(A, w, allow_zero=allow_zero)
    B = F.half_solve(A.T)
    Q = B.T @ B
    return 0.5 * (Q + Q.T)


def projection_matrix(A: Array, w: Array) -> Array:
    """``P(w) = W^{1/2} A (A^T W A)^{-1} A^T W^{1/2}``."""
    A = _as_matrix(A)
    w = _check_weights(A, w)
    F = gram(A, w)
    B = F.half_solve((np.sqrt(w)[:, None] * A).T)
    P = B.T @ B
    return 0.5 * (P + P.T)


def woodbury_update(Minv: Array, U: Array, C: Array, V: Array) -> Array:
    """Return ``(M + U C V)^{-1}`` given ``M^{-1}``.

    ``B^{-1} = M^{-1} - M^{-1} U (C^{-1} + V M^{-1} U)^{-1} V M^{-1}``.
    """
    Minv = np.asarray(Minv, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64).reshape(Minv.shape[0], -1)
    k = U.shape[1]
    if k == 0:
        return Minv.copy()
    C = np.asarray(C, dtype=np.float64).reshape(k, k)
    V = np.asarray(V, dtype=np.float64).reshape(k, Minv.shape[0])
    MU = Minv @ U
    VM = V @ Minv
    try:
        inner = np.linalg.inv(C) + V @ MU
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(inner, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularUpdateError(str(exc)) from exc
    if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(lu[0])):
        raise SingularUpdateError("inner Woodbury system is singular")
    return Minv - MU @ sla.lu_solve(lu, VM, check_finite=False)


def neumann_terms(kappa: float, tol: float, *, cap: int = 10_000) -> int:
    """Smallest ``t`` with ``kappa (1 - 1/kappa)^(t+1) <= tol``."""
    if kappa < 1.0:
        raise ValueError("kappa must be >= 1")
    if kappa == 1.0:
        return 0
    rho = 1.0 - 1.0 / kappa
    t = math.ceil((math.log(tol) - math.log(kappa)) / math.log(rho)) - 1
    return int(min(max(t, 0), cap))


def preconditioned_inverse_apply(
    Minv: Array, Atarget: Array, kappa: float, t: int, V: Array
) -> Array:
    """Apply ``f(M, t) = (1/kappa) M^{-1} sum_{i<=t} (I - Atarget M^{-1} / kappa)^i`` to ``V``.

    When ``M <= Atarget <= kappa M`` the result satisfies
    ``f <= Atarget^{-1} <= f / (1 - kappa (1 - 1/kappa)^{t+1})``.
    """
    if t < 0:
        raise ValueError("number of terms t must be non-negative")
    if kappa < 1.0:
        raise ValueError("kappa must be >= 1")
    V = np.asarray(V, dtype=np.float64)
    term = V.copy()
    acc = V.copy()
    for _ in range(t):
        term = term - (Atarget @ (Minv @ term)) / kappa
        acc += term
    return (Minv @ acc) / kappa


def spd_logdet(M: Array) -> float:
    L = cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))
