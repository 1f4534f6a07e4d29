"""Volumetric-center cutting-plane method with maintained leverage scores.

The polytope is ``{x : A x >= b}``, starting from the box ``[-R, R]^n``. The
query point ``z`` approximately minimizes the volumetric barrier
``F(x) = 1/2 log det(A^T S_x^{-2} A)`` and is re-centered by damped Newton
steps whose Hessian proxy uses leverage estimates from a
:class:`LayeredMaintainer` over the weights ``s_z^{-2}``.

Each oracle call either ends the run or adds a cut, shifted outward so that
the new row has a prescribed leverage at ``z``. Rows whose estimated
leverage falls below ``c1`` are dropped one at a time (box rows never are).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .actions import Delete, Insert, WeightUpdate
from .layered import LayeredMaintainer, LayerParams
from .linalg import Array, cholesky, leverage_scores_exact, spd_logdet, weighted_gram
from .oracles import Inside, SeparationOracle, Separator
from .projection import precondition_solve

log = logging.getLogger(__name__)


class DegeneratePolytopeError(RuntimeError):
    """Numerical breakdown of the polytope (infeasible center, singular Hessian)."""


class OracleProtocolError(RuntimeError):
    """The oracle returned a halfspace that does not cut the query point."""


@dataclass(frozen=True)
class VaidyaParams:
    """Method constants.

    The defaults are the small-constant regime of the analysis
    (``delta >= 1000 c1``). :meth:`desk` is a faster profile for small ``n``.
    """

    c1: float = 1e-4
    delta: float = 0.1
    c2: float = 1e-3
    damping: float = 0.1
    C_iter: float = 8.0
    max_newton: int = 200
    max_halvings: int = 6
    slack_cap: float = 0.01
    exact_leverage: bool = False
    audit_every: int = 0
    layers: LayerParams | None = None

    @classmethod
    def desk(cls, **overrides: object) -> "VaidyaParams":
        return replace(cls(c1=0.01, delta=1.0, c2=1e-3, C_iter=18.0), **overrides)  # type: ignore[arg-type]

    @property
    def cut_leverage(self) -> float:
        return 0.5 * math.sqrt(self.delta * self.c1)


@dataclass(frozen=True)
class FoundPoint:
    x: Array
    oracle_calls: int
    iterations: int


@dataclass(frozen=True)
class NoBallOfRadius:
    eps: float
    oracle_calls: int
    iterations: int
    final_F: float


FeasibilityOutcome = Union[FoundPoint, NoBallOfRadius]


@dataclass
class TraceRow:
    iteration: int
    oracle_calls: int
    F: float
    sigma_error: float
    wall_time: float
    constraints: int

    FIELDS = ("iteration", "oracle_calls", "F", "sigma_error", "wall_time", "constraints")

    def as_tuple(self) -> tuple:
        return (self.iteration, self.oracle_calls, self.F, self.sigma_error, self.wall_time, self.constraints)


def volumetric_value(A: Array, b: Array, x: Array) -> float:
    """``F(x) = 1/2 log det(A^T S_x^{-2} A)``; raises if ``x`` is not interior."""
    s = A @ x - b
    if np.any(s <= 0):
        raise DegeneratePolytopeError("point is not strictly inside the polytope")
    return 0.5 * spd_logdet(weighted_gram(A, s**-2))


def check_slack_stability(A: Array, b: Array, z: Array, z_new: Array, cap: float = 0.01) -> bool:
    """True when ``z_new`` is interior and ``|log s(z_new) - log s(z)|_2 <= cap``."""
    s, s_new = A @ z - b, A @ z_new - b
    if np.any(s_new <= 0):
        return False
    return bool(np.linalg.norm(np.log(s_new) - np.log(s)) <= cap)


class PolytopeState:
    """Current polytope, center and leverage maintainer."""

    def __init__(self, n: int, R: float, params: VaidyaParams) -> None:
        if R <= 0:
            raise ValueError("R must be positive")
        self.n = n
        self.R = float(R)
        self.params = params
        self.A = np.vstack([np.eye(n), -np.eye(n)])
        self.b = -self.R * np.ones(2 * n)
        self.box = np.ones(2 * n, dtype=bool)
        # Stable row identifiers: box rows are 0..2n-1, cuts count upward.
        self.tags = np.arange(2 * n)
        self.next_tag = 2 * n
        self.z = np.zeros(n)
        layers = params.layers or LayerParams.desk(n)
        # The cut leverage must fit under the insert cap.
        cap = max(layers.insert_cap, 1.2 * params.cut_leverage, params.c1)
        self.layers = replace(layers, insert_cap=cap)
        self.maintainer = LayeredMaintainer(self.A, self.weights(), self.layers)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def slacks(self, x: Array | None = None) -> Array:
        return self.A @ (self.z if x is None else x) - self.b

    def weights(self) -> Array:
        return self.slacks() ** -2

    def sigma(self) -> Array:
        if self.params.exact_leverage:
            return leverage_scores_exact(self.A, self.weights())
        return self.maintainer.query()

    def value(self) -> float:
        return volumetric_value(self.A, self.b, self.z)

    def _follow(self, w_new: Array) -> None:
        """Feed a weight change to the maintainer in admissible pieces."""
        if self.params.exact_leverage:
            return
        mt = self.maintainer
        w_old = mt.w
        dlog = np.log(w_new) - np.log(w_old)
        cap = self.layers.update_cap * (1 - 1e-9)
        pieces = max(1, math.ceil(float(np.linalg.norm(dlog)) / cap))
        for k in range(1, pieces + 1):
            target = w_new if k == pieces else w_old * np.exp(dlog * (k / pieces))
            mt.update(WeightUpdate(target))

    # Re-centering -----------------------------------------------------

    def newton_step(self) -> tuple[Array, float]:
        """Proposed ``z_new`` and the squared Newton decrement."""
        s = self.slacks()
        sig = np.maximum(self.sigma(), 1e-12)
        g = self.A.T @ (sig / s)
        H = weighted_gram(self.A, sig / s**2)
        try:
            L = cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise DegeneratePolytopeError(str(exc)) from exc
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        # dF/dz = -A^T S^{-1} sigma, so descent moves along +H^{-1} A^T S^{-1} sigma.
        return self.z + self.params.damping * step, float(g @ step)

    def move_to(self, z_new: Array) -> None:
        self.z = z_new
        self._follow(self.weights())

    def recenter(self) -> int:
        """Newton steps until half the squared decrement is at most ``c2``."""
        p = self.params
        for k in range(p.max_newton):
            z_new, dec = self.newton_step()
            if 0.5 * dec <= p.c2:
                return k
            step = z_new - self.z
            for _ in range(p.max_halvings):
                if check_slack_stability(self.A, self.b, self.z, self.z + step, p.slack_cap):
                    break
                step = 0.5 * step
            if np.any(self.slacks(self.z + step) <= 0):
                raise DegeneratePolytopeError("Newton step left the polytope")
            self.move_to(self.z + step)
        return p.max_newton

    # Cuts -------------------------------------------------------------

    def _hessian_quad(self, a: Array) -> float:
        w = self.weights()
        if self.params.exact_leverage:
            return float(a @ np.linalg.solve(weighted_gram(self.A, w), a))
        pm = self.maintainer.simp_inn.pm
        return float(a @ precondition_solve(self.A, pm.v, pm.Minv, w, a))

    def add_cut(self, a: Array, b_sep: float) -> float:
        """Add ``a^T x >= b'`` with ``b' <= b_sep`` and prescribed leverage at ``z``.

        ``(a, b_sep)`` is the inward form: the target set lies in
        ``{a^T x >= b_sep}``. Returns the chosen slack ``t = a^T z - b'``.
        """
        a = np.asarray(a, dtype=np.float64)
        az = float(a @ self.z)
        if az > b_sep:
            raise OracleProtocolError("separator does not cut the current center")
        h = self._hessian_quad(a)
        if not h > 0:
            raise DegeneratePolytopeError("new row is orthogonal to the Gram matrix")
        target = self.params.cut_leverage

        def lev(t: float) -> float:
            u = h / (t * t)
            return u / (1.0 + u)

        # Leverage decreases in the slack t; bisect on log t.
        lo, hi = math.sqrt(h) * 1e-6, math.sqrt(h) * 1e6
        if not lev(lo) > target > lev(hi):
            raise DegeneratePolytopeError("cannot bracket the cut offset")
        t = math.sqrt(lo * hi)
        for _ in range(60):
            t = math.sqrt(lo * hi)
            val = lev(t)
            if abs(val - target) <= 0.01 * target:
                break
            if val > target:
                lo = t
            else:
                hi = t
        b_new = az - t
        self.A = np.vstack([self.A, a])
        self.b = np.append(self.b, b_new)
        self.box = np.append(self.box, False)
        self.tags = np.append(self.tags, self.next_tag)
        self.next_tag += 1
        if not self.params.exact_leverage:
            self.maintainer.update(Insert(a, 1.0 / (t * t)))
        return t

    def drop_candidate(self) -> int | None:
        if self.m - 1 < self.n + 1:
            return None
        sig = self.sigma()
        cand = np.flatnonzero(~self.box)
        if cand.size == 0:
            return None
        i = int(cand[np.argmin(sig[cand])])
        return i if sig[i] < self.params.c1 else None

    def drop_cut(self, i: int) -> None:
        if self.box[i]:
            raise ValueError("box rows are never dropped")
        if self.m - 1 < self.n + 1:
            raise DegeneratePolytopeError("dropping would leave fewer than n + 1 rows")
        keep = np.arange(self.m) != i
        self.A, self.b, self.box = self.A[keep], self.b[keep], self.box[keep]
        self.tags = self.tags[keep]
        if not self.params.exact_leverage:
            self.maintainer.update(Delete(i))


def iteration_budget(n: int, R: float, eps: float, C_iter: float) -> int:
    return max(1, math.ceil(C_iter * n * math.log(n * R / eps)))


def run_feasibility(
    oracle: SeparationOracle,
    R: float,
    eps: float,
    params: VaidyaParams | None = None,
    *,
    on_trace: Callable[[TraceRow], None] | None = None,
    on_cut: Callable[[PolytopeState, Array, Separator], None] | None = None,
    state: PolytopeState | None = None,
) -> FeasibilityOutcome:
    """Find a point of ``K`` or conclude it holds no ball of radius ``eps``.

    ``on_cut`` sees every separator together with the query point, which is
    how the convex and saddle-point drivers build their transcripts.
    """
    params = params if params is not None else VaidyaParams.desk()
    n = oracle.n
    st = state if state is not None else PolytopeState(n, R, params)
    budget = iteration_budget(n, R, eps, params.C_iter)
    calls = 0
    it = 0
    t0 = time.perf_counter()

    def trace() -> None:
        if on_trace is None:
            return
        err = float("nan")
        if params.audit_every and it % params.audit_every == 0:
            err = float(np.linalg.norm(st.sigma() - leverage_scores_exact(st.A, st.weights())))
        on_trace(TraceRow(it, calls, st.value(), err, time.perf_counter() - t0, st.m))

    while calls < budget:
        it += 1
        st.recenter()
        i = st.drop_candidate()
        if i is not None:
            st.drop_cut(i)
            trace()
            continue
        calls += 1
        ans = oracle.query(st.z.copy())
        trace()
        if isinstance(ans, Inside):
            return FoundPoint(ans.x, calls, it)
        a, bsep = np.asarray(ans.a, dtype=np.float64), float(ans.b)
        scale = max(1.0, abs(bsep), float(np.abs(a).sum()) * float(np.abs(st.z).max()))
        if a @ st.z < bsep - 1e-9 * scale:
            raise OracleProtocolError("separator does not cut the query point")
        if on_cut is not None:
            on_cut(st, st.z.copy(), ans)
        # K lies in {a^T y <= bsep}, i.e. {(-a)^T y >= -bsep}.
        st.add_cut(-a, min(-bsep, float(-a @ st.z)))
    log.info("budget of %d oracle calls exhausted", budget)
    return NoBallOfRadius(eps, calls, it, st.value())
