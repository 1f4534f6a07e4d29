"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Meant for the small linear programs that appear in certificate extraction
and allocation recovery (a few hundred variables at most). Variables are
non-negative; inequality rows get slack columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Array


class LPInfeasible(RuntimeError):
    pass


class LPUnbounded(RuntimeError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: Array
    fun: float
    iterations: int


def _pivot(T: Array, row: int, col: int) -> None:
    T[row] /= T[row, col]
    piv = T[row]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * piv


def _run(T: Array, basis: list[int], ncols: int, tol: float, max_iter: int) -> int:
    """Minimize the objective in the last row of ``T`` over the first ``ncols`` columns."""
    it = 0
    while True:
        cost = T[-1, :ncols]
        entering = next((j for j in range(ncols) if cost[j] < -tol), None)
        if entering is None:
            return it
        col = T[:-1, entering]
        rhs = T[:-1, -1]
        best, leave = np.inf, -1
        for i in np.flatnonzero(col > tol):
            ratio = rhs[i] / col[i]
            # Bland: smallest ratio, ties broken by smallest basic index.
            if ratio < best - tol or (abs(ratio - best) <= tol and basis[i] < basis[leave]):
                best, leave = ratio, int(i)
        if leave < 0:
            raise LPUnbounded("objective is unbounded")
        _pivot(T, leave, entering)
        basis[leave] = entering
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit reached")


def linprog_simplex(
    c: Array,
    A_ub: Array | None = None,
    b_ub: Array | None = None,
    A_eq: Array | None = None,
    b_eq: Array | None = None,
    *,
    maximize: bool = False,
    tol: float = 1e-10,
    max_iter: int = 50_000,
) -> LPResult:
    """Optimize ``c^T x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``."""
    c = np.asarray(c, dtype=np.float64).ravel()
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=np.float64))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=np.float64).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=np.float64))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64).ravel()
    k_ub, k_eq = A_ub.shape[0], A_eq.shape[0]
    rows = k_ub + k_eq
    nvar = n + k_ub
    A = np.zeros((rows, nvar))
    A[:k_ub, :n] = A_ub
    A[:k_ub, n:] = np.eye(k_ub)
    A[k_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # Phase one: artificial columns after the real and slack ones.
    T = np.zeros((rows + 1, nvar + rows + 1))
    T[:rows, :nvar] = A
    T[:rows, nvar : nvar + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :nvar] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(nvar, nvar + rows))
    it = _run(T, basis, nvar + rows, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -T[-1, -1] > 1e-8 * scale:
        raise LPInfeasible("constraints are infeasible")
    # Push remaining artificials out of the basis; drop redundant rows.
    keep = []
    for i in range(rows):
        if basis[i] >= nvar:
            j = next((j for j in range(nvar) if abs(T[i, j]) > 1e-9), None)
            if j is None:
                continue
            _pivot(T, i, j)
            basis[i] = j
        keep.append(i)
    T2 = np.zeros((len(keep) + 1, nvar + 1))
    T2[:-1, :nvar] = T[keep, :nvar]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[i] for i in keep]
    cost = np.zeros(nvar)
    cost[:n] = -c if maximize else c
    T2[-1, :nvar] = cost
    for i, j in enumerate(basis):
        T2[-1] -= cost[j] * T2[i]
    it += _run(T2, basis, nvar, tol, max_iter)
    x = np.zeros(nvar)
    for i, j in enumerate(basis):
        x[j] = T2[i, -1]
    x = np.maximum(x[:n], 0.0)
    return LPResult(x=x, fun=float(c @ x), iterations=it)
