"""Leverage-score deltas for low-rank and batched weight changes.

``monotone_lowrank_delta`` handles one monotone change of ``k`` weights with
two preconditioned solves and a ``k x k`` Woodbury system.
``batched_update`` turns a short mixed sequence of weight updates, inserts
and deletes into a chain of such monotone steps:

1. every weight update is split into its entry-wise increase and decrease;
2. increases and inserts go first, decreases and deletes last, each block
   padded with no-op steps to a multiple of the phase length ``L``;
3. each phase becomes at most three monotone steps on a tracked weight
   vector ``v``, ignoring coordinates that moved by less than a factor
   ``e^eta``;
4. the per-step deltas are summed.

Rows that are inserted or deleted live in a universe matrix where absent
rows have weight zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actions import ActionCaps, Delete, Insert, Replay, UpdateAction, WeightUpdate, replay
from .linalg import (
    Array,
    cholesky,
    leverage_scores_exact,
    neumann_terms,
    preconditioned_inverse_apply,
    weighted_gram,
)
from .projection import gram_sandwich

import scipy.linalg as sla


class ApproxInverse:
    """An operator ``U`` with ``M(w)^{-1} <= U_upper`` and a tunable ``U_eps``.

    Built from a reference ``(u, M(u)^{-1})`` when the two Gram matrices are
    within a modest spectral ratio, otherwise from a fresh factorization.
    """

    def __init__(
        self,
        A: Array,
        w: Array,
        reference: tuple[Array, Array] | None = None,
        *,
        max_terms: int = 200,
    ) -> None:
        self.M = weighted_gram(A, w)
        self.kappa = 1.0
        self.P: Array | None = None
        if reference is not None:
            u, Minv_u = reference
            lo, hi = gram_sandwich(A, u, Minv_u, w)
            if lo > 0:
                kappa = max(hi / lo, 1.0)
                if neumann_terms(kappa, 1e-16) <= max_terms:
                    self.P = Minv_u / lo
                    self.kappa = kappa
        if self.P is None:
            L = cholesky(self.M)
            P = sla.cho_solve((L, True), np.eye(self.M.shape[0]), check_finite=False)
            self.P = 0.5 * (P + P.T)

    @property
    def exact(self) -> bool:
        return self.kappa == 1.0

    def upper(self, B: Array) -> Array:
        """Apply the upper bound ``P >= M^{-1}``."""
        return self.P @ B

    def apply(self, B: Array, eps: float) -> Array:
        """Apply ``U_eps`` with ``(1 - eps) M^{-1} <= U_eps <= M^{-1}``."""
        t = neumann_terms(self.kappa, max(eps, 1e-300))
        return preconditioned_inverse_apply(self.P, self.M, self.kappa, t, B)


def exact_leverage_delta(A: Array, w: Array, w_new: Array) -> Array:
    return leverage_scores_exact(A, w_new, allow_zero=True) - leverage_scores_exact(
        A, w, allow_zero=True
    )


def monotone_lowrank_delta(
    A: Array,
    w: Array,
    w_new: Array,
    Uapprox: ApproxInverse | None = None,
    Uapprox_new: ApproxInverse | None = None,
    eps: float = 1e-8,
) -> Array:
    """Vector ``c`` with ``||c - (sigma(w_new) - sigma(w))||_2 <= eps``.

    ``w_new - w`` must be entry-wise of one sign. Zero weights are allowed
    (absent rows) as long as both Gram matrices stay definite. ``Uapprox``
    and ``Uapprox_new`` approximate the two Gram inverses; they are built
    exactly when omitted.
    """
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    w_new = np.asarray(w_new, dtype=np.float64)
    if w.shape != w_new.shape or w.shape != (A.shape[0],):
        raise ValueError("weight vectors must match the row count")
    d = w_new - w
    S = np.flatnonzero(d)
    if S.size == 0:
        return np.zeros(A.shape[0])
    if np.all(d[S] < 0):
        # sigma(w_new) - sigma(w) = -(sigma(w) - sigma(w_new)) with an increase.
        return -monotone_lowrank_delta(A, w_new, w, Uapprox_new, Uapprox, eps)
    if not np.all(d[S] > 0):
        raise ValueError("weight change is not monotone")

    U = Uapprox if Uapprox is not None else ApproxInverse(A, w)
    Un = Uapprox_new if Uapprox_new is not None else ApproxInverse(A, w_new)
    k = S.size
    AS = A[S]
    dS = d[S]
    # M(w_new) <= beta M(w): trace bound through the upper operator, or the
    # plain weight ratio when no changed row starts from zero.
    beta = 1.0 + float(np.sum(dS * np.einsum("ij,ji->i", AS, U.upper(AS.T))))
    if np.all(w[S] > 0):
        beta = min(beta, float(np.max(w_new[S] / w[S])))
    eps_t = eps / (3.0 * beta * math.sqrt(k))

    c = np.zeros(A.shape[0])
    Gn = Un.apply(AS.T, eps_t)
    c[S] = dS * np.einsum("ij,ji->i", AS, Gn)

    G = U.apply(AS.T, eps_t)
    K = np.diag(1.0 / dS) + AS @ G
    K = 0.5 * (K + K.T)
    B = A @ G
    try:
        lu = sla.lu_factor(K, check_finite=False)
        X = sla.lu_solve(lu, B.T, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return exact_leverage_delta(A, w, w_new)
    if not np.all(np.isfinite(X)):
        return exact_leverage_delta(A, w, w_new)
    c -= w * np.einsum("ij,ji->i", B, X)
    return c


@dataclass(frozen=True)
class Step:
    """One elementary step of the reordered sequence."""

    kind: str  # "dense", "insert", "delete" or "noop"
    delta: Array | None = None
    row: int = -1
    weight: float = 0.0


@dataclass
class BatchPlan:
    """Reordered steps, their exact partial sums and the executed trajectory."""

    L: int
    eta: float
    steps: list[Step]
    n_positive: int
    sequence: list[Array]
    phases: list[tuple[int, int]]
    trajectory: list[Array] = field(default_factory=list)


@dataclass
class BatchResult:
    v: Array
    c: Array
    A_final: Array
    w_final: Array
    origin: Array
    c_universe: Array
    v_universe: Array
    plan: BatchPlan
    replay: Replay


def default_phase_length(n: int) -> int:
    return max(4, math.ceil(math.log(max(n, 2)) ** 3))


def _split_steps(rep: Replay, L: int) -> tuple[list[Step], int]:
    pos: list[Step] = []
    neg: list[Step] = []
    next_id = rep.m0
    for k, act in enumerate(rep.actions, start=1):
        prev, cur = rep.W[k - 1], rep.W[k]
        if isinstance(act, WeightUpdate):
            hi = np.maximum(prev, cur)
            pos.append(Step("dense", delta=hi - prev))
            neg.append(Step("dense", delta=cur - hi))
        elif isinstance(act, Insert):
            pos.append(Step("insert", row=next_id, weight=act.weight))
            next_id += 1
        elif isinstance(act, Delete):
            j = rep.rows[k - 1][act.index]
            neg.append(Step("delete", row=j, weight=float(prev[j])))
    pad = lambda s: s + [Step("noop")] * (-len(s) % L)  # noqa: E731
    pos, neg = pad(pos), pad(neg)
    return pos + neg, len(pos)


def plan_batched(rep: Replay, eta: float, L: int) -> BatchPlan:
    """Reorder, split into phases and sparsify; see module docstring."""
    if L < 1:
        raise ValueError("phase length must be positive")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    steps, n_pos = _split_steps(rep, L)
    seq = [rep.W[0].copy()]
    t = rep.W[0].copy()
    for st in steps:
        t = t.copy()
        if st.kind == "dense":
            t += st.delta
            np.maximum(t, 0.0, out=t)
        elif st.kind == "insert":
            t[st.row] = st.weight
        elif st.kind == "delete":
            t[st.row] = 0.0
        seq.append(t)
    phases = [(a, a + L) for a in range(0, len(steps), L)]
    plan = BatchPlan(L=L, eta=eta, steps=steps, n_positive=n_pos, sequence=seq, phases=phases)

    up, down = math.exp(eta), math.exp(-eta)
    v = rep.W[0].copy()
    traj = [v.copy()]
    for a, b in phases:
        target = seq[b]
        kinds = [steps[i] for i in range(a, b)]
        if a < n_pos:
            ins = [st.row for st in kinds if st.kind == "insert"]
            if ins:
                v = v.copy()
                v[ins] = target[ins]
                traj.append(v)
            mask = (v > 0) & (target > v * up)
        else:
            dele = [st.row for st in kinds if st.kind == "delete"]
            live = np.ones(v.size, dtype=bool)
            live[dele] = False
            mask = live & (v > 0) & (target < v * down)
        if mask.any():
            v_next = v.copy()
            v_next[mask] = target[mask]
            half = np.median(np.stack([v / 2, v_next, 2 * v]), axis=0)
            if not np.array_equal(half, v_next):
                traj.append(half)
            traj.append(v_next)
            v = v_next
        if a >= n_pos and dele:
            v = v.copy()
            v[dele] = 0.0
            traj.append(v)
    plan.trajectory = traj
    return plan


def batched_update(
    A: Array,
    w: Array,
    actions: Sequence[UpdateAction],
    tol: float = 1e-8,
    *,
    eta: float = 1e-3,
    L: int | None = None,
    caps: ActionCaps | None = None,
    reference: tuple[Array, Array] | None = None,
) -> BatchResult:
    """Apply ``actions`` and return ``v`` with the leverage change ``c``.

    ``c`` satisfies ``||c - (sigma_{A_T}(v) - sigma_{A_0}(w))||_2 <= tol``,
    entry ``i`` of ``c`` referring to final row ``i`` (rows deleted along the
    way appear only in ``c_universe``). ``reference`` is an optional pair
    ``(u, M(u)^{-1})`` over the universe rows used to precondition solves.
    """
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    rep = replay(A, w, actions, caps)
    L = default_phase_length(A.shape[1]) if L is None else int(L)
    plan = plan_batched(rep, eta, L)
    AU = rep.AU
    T = max(rep.T, 1)
    step_tol = tol / (8 * T)
    if reference is None:
        ref = None
    else:
        u, Minv_u = reference
        ref = (np.asarray(u, dtype=np.float64), np.asarray(Minv_u, dtype=np.float64))
    c = np.zeros(AU.shape[0])
    traj = plan.trajectory
    prev_U = ApproxInverse(AU, traj[0], ref) if len(traj) > 1 else None
    for x, y in zip(traj[:-1], traj[1:]):
        Un = ApproxInverse(AU, y, ref)
        c += monotone_lowrank_delta(AU, x, y, prev_U, Un, step_tol)
        prev_U = Un
    V = traj[-1]
    ids = rep.rows[-1]
    return BatchResult(
        v=V[ids].copy(),
        c=c[ids].copy(),
        A_final=AU[ids].copy(),
        w_final=rep.W[-1][ids].copy(),
        origin=rep.final_origin(),
        c_universe=c,
        v_universe=V,
        plan=plan,
        replay=rep,
    )
