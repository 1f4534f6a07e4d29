"""Leverage-score estimators driven by action sequences.

Both estimators keep a vector ``sigma`` of approximate leverage scores for
the current ``(A, w)``. An update first runs :func:`batched_update`, which
moves the weights to an intermediate ``w_mid`` with an (almost) exact
leverage change, and then estimates the remaining change from ``w_mid`` to
``w_new`` with a projection-maintenance state whose maintained weights are
only ``eps``-close to the true ones.

:class:`SimpleEstimator` evaluates that remainder at a single point.
:class:`ComplicatedEstimator` integrates it along the segment with Gauss
quadrature, expanding every ``Q(x_t)`` around the maintained ``Q(z_t)``; the
correction terms are estimated with independent Gaussian sketches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .actions import ActionCaps, UpdateAction
from .batched import BatchResult, batched_update, default_phase_length
from .linalg import Array, leverage_scores_exact
from .projection import ProjectionState, precondition_solve
from .quadrature import QuadratureRule, gauss_rule
from .sketch import derive_seed, make_sketch

_TAG_ETA, _TAG_AB, _TAG_GAMMA = 1, 2, 3


@dataclass(frozen=True)
class BatchSettings:
    """Knobs forwarded to :func:`batched_update`."""

    tol: float = 1e-8
    eta: float = 1e-3
    L: int | None = None
    caps: ActionCaps = ActionCaps()


class _EstimatorBase:
    def __init__(self, A: Array, w: Array, eps: float, batch: BatchSettings | None = None) -> None:
        self.A = np.array(A, dtype=np.float64)
        self.w = np.array(w, dtype=np.float64)
        self.eps = float(eps)
        self.batch = batch if batch is not None else BatchSettings()
        self.pm = ProjectionState(self.A, self.w, self.eps)
        self.sigma = leverage_scores_exact(self.A, self.w)
        self.updates = 0

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def query(self) -> Array:
        return self.sigma.copy()

    def refine(self, sigma_new: Array) -> None:
        sigma_new = np.array(sigma_new, dtype=np.float64)
        if sigma_new.shape != self.sigma.shape:
            raise ValueError(f"refinement has shape {sigma_new.shape}, expected {self.sigma.shape}")
        self.sigma = sigma_new

    def _batch(self, actions: Sequence[UpdateAction]) -> BatchResult:
        n_new = sum(1 for a in actions if hasattr(a, "row"))
        u = np.concatenate([self.pm.v, np.zeros(n_new)])
        L = self.batch.L if self.batch.L is not None else default_phase_length(self.A.shape[1])
        return batched_update(
            self.A,
            self.w,
            actions,
            self.batch.tol,
            eta=self.batch.eta,
            L=L,
            caps=self.batch.caps,
            reference=(u, self.pm.Minv),
        )

    def _restructure(self, res: BatchResult) -> None:
        """Mirror the row inserts and deletes of ``res`` in the projection state."""
        survivors = set(int(i) for i in res.origin if i >= 0)
        for i in sorted(set(range(self.m)) - survivors, reverse=True):
            self.pm.delete(i)
        for r in np.flatnonzero(res.origin < 0):
            self.pm.insert(res.A_final[r], float(res.v[r]))

    def _mid_sigma(self, res: BatchResult) -> Array:
        base = np.zeros(res.c_universe.size)
        base[: self.m] = self.sigma
        return (base + res.c_universe)[res.replay.rows[-1]]

    def update(self, actions: Sequence[UpdateAction]) -> Array:
        """Consume ``actions``; returns the change applied to ``sigma``.

        The returned vector is indexed by the final rows; rows that were
        inserted start from zero.
        """
        actions = list(actions)
        if not actions:
            return np.zeros(self.m)
        res = self._batch(actions)
        self._restructure(res)
        sigma_mid = self._mid_sigma(res)
        origin = res.origin
        old = np.where(origin >= 0, self.sigma[np.maximum(origin, 0)], 0.0)
        dnew = self._remainder(res.A_final, res.v, res.w_final)
        self.A = res.A_final
        self.w = res.w_final
        self.sigma = sigma_mid + dnew
        self.updates += 1
        return self.sigma - old

    def _remainder(self, A: Array, w_mid: Array, w_new: Array) -> Array:
        raise NotImplementedError


class SimpleEstimator(_EstimatorBase):
    """Single-point estimate of the change from ``w_mid`` to ``w_new``."""

    def _remainder(self, A: Array, w_mid: Array, w_new: Array) -> Array:
        _, _, Q = self.pm.update(w_mid)
        tau = np.diag(Q)
        out = (w_new - w_mid) * tau + w_new * (self.pm.Q2 @ (w_mid - w_new))
        self.pm.update(w_new)
        return out


# Sketch factory: (tag, s, s2, t) -> r x m matrix, or None for exact inner products.
SketchFn = Callable[[int, int, int, int], "Array | None"]


@dataclass
class DecompositionTerms:
    """The five pieces of the quadrature expansion, each a length-m vector."""

    first: Array
    theta: Array
    eta: Array
    alpha_beta: Array
    gamma: Array

    def total(self) -> Array:
        return self.first + self.theta - self.eta + 2.0 * self.alpha_beta + self.gamma


def _head(Lm: Array | None, A: Array, scale: Array) -> Array:
    """``L diag(scale) A`` with ``L`` the sketch, or the identity when ``None``."""
    return scale[:, None] * A if Lm is None else (Lm * scale[None, :]) @ A


def decomposition_terms(
    A: Array,
    w_mid: Array,
    w_new: Array,
    v_mid: Array,
    Minv_mid: Array,
    nodes: Sequence[tuple[Array, Array, Array]],
    rule: QuadratureRule,
    sketch: SketchFn | None = None,
    *,
    solve_tol: float = 1e-13,
) -> DecompositionTerms:
    """Evaluate the expansion of ``sigma(w_new) - sigma(w_mid)``.

    ``nodes[j] = (z, Minv_z, Q_z)`` are the maintained weights and caches at
    quadrature node ``t_j`` (the path ``x_t = w_mid + t (w_new - w_mid)``).
    ``Minv_mid`` is ``M(v_mid)^{-1}``. Without ``sketch`` every inner product
    is exact, and the sum of the terms equals the true change up to
    quadrature error.

    Difference matrices are diagonal but may have mixed signs; each is split
    as ``|D|^{1/2} sgn(D) |D|^{1/2}`` with the sign kept on one side.
    """
    ts, wt = rule.as_arrays()
    m = A.shape[0]
    d = w_mid - w_new
    sq_new = np.sqrt(w_new)
    tail_new = A.T * sq_new[None, :]
    theta, eta, ab, gam = (np.zeros(m) for _ in range(4))

    def get_L(tag: int, s: int, s2: int, t: int) -> Array | None:
        return None if sketch is None else sketch(tag, s, s2, t)

    def inner(X: Array, Y: Array) -> Array:
        return np.einsum("ij,ij->j", X, Y)

    def solver(z: Array, Minv_z: Array, y: Array) -> Callable[[Array], Array]:
        # Row-block solve: H -> H M(y)^{-1}.
        return lambda H: precondition_solve(A, z, Minv_z, y, H.T, tol=solve_tol).T

    # First-order term and its correction from tau(w_mid) - tau(v_mid).
    tau_mid = np.einsum("ij,jk,ik->i", A, Minv_mid, A)
    first = tau_mid * (w_new - w_mid)
    D0 = v_mid - w_mid
    if np.any(D0 != 0) and np.any(d != 0):
        a0, s0 = np.sqrt(np.abs(D0)), np.sign(D0)
        for si, s in enumerate(ts):
            y = v_mid + s * (w_mid - v_mid)
            Lm = get_L(_TAG_ETA, si, 0, 0)
            solve = solver(v_mid, Minv_mid, y)
            left = solve(_head(Lm, A, a0)) @ A.T
            right = solve(_head(Lm, A, s0 * a0)) @ A.T
            eta += wt[si] * d * inner(left, right)

    if np.any(d != 0):
        ad, sd = np.sqrt(np.abs(d)), np.sign(d)
        tail_d = A.T * d[None, :]
        for ti, (t, (z, Minv_z, Q_z)) in enumerate(zip(ts, nodes)):
            theta += wt[ti] * w_new * ((Q_z * Q_z) @ d)
            x = w_mid + t * (w_new - w_mid)
            D = z - x
            if not np.any(D != 0):
                continue
            aD, sD = np.sqrt(np.abs(D)), np.sign(D)
            tail_D = A.T * D[None, :]
            ys = [z + s * (x - z) for s in ts]
            solves = [solver(z, Minv_z, y) for y in ys]
            for si in range(len(ts)):
                Lm = get_L(_TAG_AB, si, 0, ti)
                alpha = solves[si](_head(Lm, A, aD)) @ tail_new
                beta = ((solves[si](_head(Lm, A, sD * aD)) @ tail_d) @ A) @ Minv_z @ tail_new
                ab += wt[ti] * wt[si] * inner(alpha, beta)
            cache: dict[tuple[int, int], Array] = {}

            def gamma_rows(Lm: Array | None, si: int, signed: bool) -> Array:
                key = (si, int(signed))
                if Lm is None and key in cache:
                    return cache[key]
                head = _head(Lm, A, sd * ad if signed else ad)
                out = solves[si]((solves[si](head) @ tail_D) @ A) @ tail_new
                if Lm is None:
                    cache[key] = out
                return out

            for si in range(len(ts)):
                for s2 in range(len(ts)):
                    Lm = get_L(_TAG_GAMMA, si, s2, ti)
                    g1 = gamma_rows(Lm, si, False)
                    g2 = gamma_rows(Lm, s2, True)
                    gam += wt[ti] * wt[si] * wt[s2] * inner(g1, g2)
    return DecompositionTerms(first=first, theta=theta, eta=eta, alpha_beta=ab, gamma=gam)


class ComplicatedEstimator(_EstimatorBase):
    """Quadrature-plus-sketch estimate of the change from ``w_mid`` to ``w_new``.

    ``r`` is the sketch dimension and ``N`` the number of quadrature nodes
    per variable. With ``r=None`` the inner products are exact, which turns
    the estimator into a deterministic quadrature scheme.
    """

    def __init__(
        self,
        A: Array,
        w: Array,
        eps: float,
        *,
        r: int | None = 8,
        N: int = 6,
        seed: int = 0,
        batch: BatchSettings | None = None,
    ) -> None:
        if r is not None and r < 1:
            raise ValueError("sketch dimension r must be at least 1")
        super().__init__(A, w, eps, batch)
        self.r = r
        self.N = int(N)
        self.rule = gauss_rule(self.N)
        self.seed = int(seed)
        self.last_terms: DecompositionTerms | None = None

    def _sketch_fn(self, m: int) -> SketchFn | None:
        if self.r is None:
            return None
        r, seed, k = self.r, self.seed, self.updates

        def fn(tag: int, s: int, s2: int, t: int) -> Array:
            return make_sketch(r, m, derive_seed(seed, k, tag, s, s2, t)).matrix

        return fn

    def _remainder(self, A: Array, w_mid: Array, w_new: Array) -> Array:
        v_mid, Minv_mid, _ = self.pm.update(w_mid)
        v_mid, Minv_mid = v_mid.copy(), Minv_mid.copy()
        ts, _ = self.rule.as_arrays()
        nodes = []
        for t in ts:
            z, Minv_z, Q_z = self.pm.update(w_mid + t * (w_new - w_mid))
            nodes.append((z.copy(), Minv_z.copy(), Q_z.copy()))
        self.pm.update(w_new)
        terms = decomposition_terms(
            A, w_mid, w_new, v_mid, Minv_mid, nodes, self.rule, self._sketch_fn(A.shape[0])
        )
        self.last_terms = terms
        return terms.total()
