"""Market equilibria through convex-concave games.

Two market models are covered: linear exchange (Arrow-Debreu) and Fisher
markets with spending-constraint utilities. Each is cast as a game, solved
by :func:`cutplane.saddle.solve_saddle` in coordinates rescaled to the unit
box, and turned into prices plus allocations. The verifiers at the bottom
evaluate the equilibrium conditions directly and share no code with the
solvers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .linalg import Array
from .oracles import HalfspaceOracle
from .saddle import SaddleProblem, SaddleResult, solve_saddle
from .simplex import LPInfeasible, LPUnbounded, linprog_simplex
from .vaidya import TraceRow, VaidyaParams

log = logging.getLogger(__name__)


class MarketAssumptionError(ValueError):
    """The instance violates a condition needed for an equilibrium to exist."""


class EquilibriumNotReached(RuntimeError):
    """Residuals stayed above tolerance; the report is attached."""

    def __init__(self, msg: str, report: "EquilibriumReport") -> None:
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class GameEval:
    value: float
    grads: dict[str, Array]


@dataclass
class EquilibriumReport:
    prices: Array
    allocation: Array
    clearing: float
    budget: float
    bang_per_buck: float
    method: str = "transport"
    oracle_calls: int = 0
    extra: dict = field(default_factory=dict)

    def worst(self) -> float:
        return max(self.clearing, self.budget, self.bang_per_buck)

    def ok(self, tol: float) -> bool:
        return self.worst() <= tol


# ---------------------------------------------------------------------------
# Instances


@dataclass
class ExchangeMarket:
    """Agent ``i`` owns one unit of good ``i`` and values good ``j`` at ``u[i, j]``."""

    u: Array

    def __post_init__(self) -> None:
        u = np.asarray(self.u)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("u must be a square matrix")
        if np.any(u < 0) or np.any(u != np.round(u)):
            raise ValueError("utilities must be non-negative integers")
        self.u = u.astype(np.float64)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def U(self) -> float:
        return float(self.u.max())

    @property
    def edges(self) -> Array:
        return self.u > 0

    def delta(self) -> float:
        """``(n U)^n``, the magnitude bound for equilibrium prices."""
        return float((self.n * self.U) ** self.n)

    def validate(self) -> None:
        E = self.edges
        if not np.all(E.any(axis=1)):
            raise MarketAssumptionError("some agent values no good")
        if not np.all(E.any(axis=0)):
            raise MarketAssumptionError("some good is valued by nobody")
        k, labels = connected_components(E.astype(int), directed=True, connection="strong")
        sizes = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(sizes == 1):
            i = int(np.flatnonzero(labels == c)[0])
            if not E[i, i]:
                raise MarketAssumptionError(f"singleton component {{{i}}} has no loop")


@dataclass(frozen=True)
class Segment:
    buyer: int
    good: int
    rate: float
    cap: float


@dataclass
class FisherMarket:
    budgets: Array
    n_goods: int
    segments: list[Segment]

    def __post_init__(self) -> None:
        self.budgets = np.asarray(self.budgets, dtype=np.float64).ravel()

    @property
    def n_buyers(self) -> int:
        return self.budgets.size

    @property
    def arrays(self) -> tuple[Array, Array, Array, Array]:
        s = self.segments
        return (
            np.array([g.buyer for g in s], dtype=int),
            np.array([g.good for g in s], dtype=int),
            np.array([g.rate for g in s], dtype=np.float64),
            np.array([g.cap for g in s], dtype=np.float64),
        )

    def validate(self) -> None:
        if np.any(self.budgets <= 0):
            raise MarketAssumptionError("budgets must be positive")
        if not self.segments:
            raise MarketAssumptionError("no segments")
        bi, gj, rate, cap = self.arrays
        if np.any(rate <= 0) or np.any(cap <= 0):
            raise MarketAssumptionError("segment rates and caps must be positive")
        if bi.min() < 0 or bi.max() >= self.n_buyers or gj.min() < 0 or gj.max() >= self.n_goods:
            raise MarketAssumptionError("segment refers to an unknown buyer or good")
        if np.any(np.bincount(gj, minlength=self.n_goods) == 0):
            raise MarketAssumptionError("some good has no segment")
        total = np.bincount(bi, weights=cap, minlength=self.n_buyers)
        if np.any(total < self.budgets):
            raise MarketAssumptionError("some buyer cannot spend the whole budget")


# ---------------------------------------------------------------------------
# Game oracles


def ad_game_oracle(market: ExchangeMarket, p: Array, beta: Array, lam: Array, eta: Array) -> GameEval:
    """``sum p_i log(p_i / beta_i) - lam^T p - eta^T p`` and its partial gradients."""
    p, beta = np.asarray(p, dtype=np.float64), np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0) or np.any(p < 1):
        raise ValueError("point outside the domain (need p >= 1 and beta > 0)")
    logr = np.log(p / beta)
    value = float(p @ logr - lam @ p - eta @ p)
    grads = {"p": logr + 1.0 - lam - eta, "beta": -p / beta, "lam": -p, "eta": -p}
    return GameEval(value, grads)


def fisher_game_oracle(market: FisherMarket, p: Array, eta: Array, lam: Array) -> GameEval:
    """``-sum p log p + eta^T p + lam^T B + sum cap * max(0, log u - eta_j - lam_i)``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("prices must be positive")
    bi, gj, rate, cap = market.arrays
    hinge = np.log(rate) - eta[gj] - lam[bi]
    active = hinge > 0
    value = float(-p @ np.log(p) + eta @ p + lam @ market.budgets + cap @ np.maximum(hinge, 0.0))
    # Subgradient 0 at the kink.
    spend = np.where(active, cap, 0.0)
    grads = {
        "p": -np.log(p) - 1.0 + eta,
        "eta": p - np.bincount(gj, weights=spend, minlength=market.n_goods),
        "lam": market.budgets - np.bincount(bi, weights=spend, minlength=market.n_buyers),
    }
    return GameEval(value, grads)


# ---------------------------------------------------------------------------
# Box rescaling


@dataclass(frozen=True)
class _Scaled:
    """Box ``[lo, hi]`` mapped to ``[-1, 1]`` coordinatewise."""

    lo: Array
    hi: Array

    @property
    def c(self) -> Array:
        return 0.5 * (self.lo + self.hi)

    @property
    def s(self) -> Array:
        return 0.5 * (self.hi - self.lo)

    def to_v(self, t: Array) -> Array:
        return self.c + self.s * t

    def to_t(self, v: Array) -> Array:
        return (v - self.c) / self.s

    def oracle(self, G: Array | None = None, h: Array | None = None) -> HalfspaceOracle:
        """Halfspace oracle for ``{t : |t| <= 1, G v(t) <= h}``."""
        k = self.lo.size
        rows, rhs = [np.eye(k), -np.eye(k)], [np.ones(k), np.ones(k)]
        if G is not None and G.shape[0]:
            rows.append(G * self.s[None, :])
            rhs.append(h - G @ self.c)
        return HalfspaceOracle(np.vstack(rows), np.concatenate(rhs))


def _default_params() -> VaidyaParams:
    return VaidyaParams.desk(C_iter=35.0, exact_leverage=True)


# ---------------------------------------------------------------------------
# Arrow-Debreu


def _ad_problem(market: ExchangeMarket) -> tuple[SaddleProblem, _Scaled, _Scaled]:
    n, u = market.n, market.u
    D = market.delta()
    E = np.argwhere(market.edges)
    # beta_i >= 1/(2U) keeps the barrier gradient bounded and keeps every
    # equilibrium with min p = 1 (where beta_i = min_j p_j / u_ij >= 1/U).
    sx = _Scaled(np.concatenate([np.ones(n), np.full(n, 0.5 / market.U)]), np.full(2 * n, D))
    G = np.zeros((len(E), 2 * n))
    for k, (i, j) in enumerate(E):
        G[k, n + i] = u[i, j]
        G[k, j] = -1.0
    X = sx.oracle(G, np.zeros(len(E)))
    Lam = math.log(n * market.U * D) + 1.0
    sy = _Scaled(np.full(2 * n, -Lam), np.full(2 * n, Lam))
    # lam_j + eta_i >= log u_ij, i.e. -lam_j - eta_i <= -log u_ij.
    Gy = np.zeros((len(E), 2 * n))
    for k, (i, j) in enumerate(E):
        Gy[k, j] = -1.0
        Gy[k, n + i] = -1.0
    Y = sy.oracle(Gy, -np.log(u[E[:, 0], E[:, 1]]))

    def first_order(tx: Array, ty: Array) -> Array:
        v, w = sx.to_v(tx), sy.to_v(ty)
        ev = ad_game_oracle(market, v[:n], v[n:], w[:n], w[n:])
        g = ev.grads
        gx = np.concatenate([g["p"], g["beta"]]) * sx.s
        gy = np.concatenate([g["lam"], g["eta"]]) * sy.s
        return np.concatenate([gx, -gy])

    prob = SaddleProblem(2 * n, 2 * n, first_order, X, Y, R=1.0, r=1.0 / (4 * market.U))
    return prob, sx, sy


def _lp_min_residual(
    n_var: int,
    rows_eq: list[tuple[Array, float]],
    bounds: Array | None = None,
) -> tuple[Array, float]:
    """Minimize ``t`` subject to ``|a^T x - b| <= t`` for each row and ``0 <= x <= bounds``."""
    A_ub, b_ub = [], []
    for a, b in rows_eq:
        A_ub.append(np.append(a, -1.0))
        b_ub.append(b)
        A_ub.append(np.append(-a, -1.0))
        b_ub.append(-b)
    if bounds is not None:
        for k in np.flatnonzero(np.isfinite(bounds)):
            row = np.zeros(n_var + 1)
            row[k] = 1.0
            A_ub.append(row)
            b_ub.append(bounds[k])
    c = np.zeros(n_var + 1)
    c[-1] = 1.0
    res = linprog_simplex(c, np.array(A_ub), np.array(b_ub))
    return res.x[:n_var], float(res.x[-1])


def ad_transport(market: ExchangeMarket, p: Array, tol: float) -> Array:
    """Allocation on the near-best bang-per-buck edges minimizing the worst imbalance."""
    n, u = market.n, market.u
    bpb = u / p[None, :]
    best = bpb.max(axis=1, keepdims=True)
    S = np.argwhere((u > 0) & (bpb >= (1 - tol) * best))
    rows = []
    for j in range(n):
        a = np.array([1.0 if jj == j else 0.0 for _, jj in S])
        rows.append((a, 1.0))
    for i in range(n):
        a = np.array([p[jj] if ii == i else 0.0 for ii, jj in S])
        rows.append((a, float(p[i])))
    xs, _ = _lp_min_residual(len(S), rows)
    x = np.zeros((n, n))
    x[S[:, 0], S[:, 1]] = xs
    return x


def ad_support_polish(market: ExchangeMarket, support: Array) -> tuple[Array, Array] | None:
    """Exact equilibrium whose purchases stay on ``support``, or ``None``.

    Variables ``(p, beta, y)``: ``u_ij beta_i <= p_j`` on every edge with
    equality on the support, money flows ``y`` on the support balance every
    agent's income and every good's price, and ``p >= 1``.
    """
    n, u = market.n, market.u
    E = np.argwhere(market.edges)
    S = np.argwhere(support & market.edges)
    if len(S) == 0:
        return None
    nv = 2 * n + len(S)
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for i, j in E:
        row = np.zeros(nv)
        row[n + i], row[j] = u[i, j], -1.0
        if support[i, j]:
            A_eq.append(row)
            b_eq.append(0.0)
        else:
            A_ub.append(row)
            b_ub.append(0.0)
    for i in range(n):
        row = np.zeros(nv)
        row[i] = -1.0
        A_ub.append(row)
        b_ub.append(-1.0)
    for j in range(n):
        row = np.zeros(nv)
        row[j] = -1.0
        for k, (_, jj) in enumerate(S):
            if jj == j:
                row[2 * n + k] = 1.0
        A_eq.append(row)
        b_eq.append(0.0)
    for i in range(n):
        row = np.zeros(nv)
        row[i] = -1.0
        for k, (ii, _) in enumerate(S):
            if ii == i:
                row[2 * n + k] = 1.0
        A_eq.append(row)
        b_eq.append(0.0)
    c = np.zeros(nv)
    c[:n] = 1.0
    try:
        res = linprog_simplex(c, np.array(A_ub), np.array(b_ub), np.array(A_eq), np.array(b_eq))
    except (LPInfeasible, LPUnbounded):
        return None
    p = res.x[:n]
    x = np.zeros((n, n))
    x[S[:, 0], S[:, 1]] = res.x[2 * n :] / p[S[:, 1]]
    return p, x


def _normalize(p: Array) -> Array:
    return p / p.min()


def solve_arrow_debreu(
    market: ExchangeMarket,
    eps_eq: float = 1e-2,
    *,
    seed: int = 0,
    params: VaidyaParams | None = None,
    saddle_eps: float = 0.05,
    polish: bool = True,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> EquilibriumReport:
    """Equilibrium prices and allocations with verifier residuals at most ``eps_eq``."""
    market.validate()
    prob, sx, _ = _ad_problem(market)
    res = solve_saddle(prob, saddle_eps, seed, params or _default_params(), on_trace=on_trace)
    n = market.n
    p = _normalize(sx.to_v(res.x)[:n])
    x = ad_transport(market, p, eps_eq)
    report = _ad_report(market, p, x, "transport", res)
    if report.ok(eps_eq) or not polish:
        return _finish(report, eps_eq)
    bpb = market.u / p[None, :]
    best = bpb.max(axis=1, keepdims=True)
    for tau in (1e-3, 1e-2, 3e-2, 1e-1, 3e-1):
        support = market.edges & (bpb >= (1 - tau) * best)
        out = ad_support_polish(market, support)
        if out is None:
            continue
        cand = _ad_report(market, _normalize(out[0]), out[1] * 1.0, "support-polish", res)
        cand.extra["tau"] = tau
        if cand.ok(eps_eq):
            return cand
    return _finish(report, eps_eq)


def _ad_report(market: ExchangeMarket, p: Array, x: Array, method: str, res: SaddleResult) -> EquilibriumReport:
    c, b, bb = verify_equilibrium_ad(market, p, x)
    return EquilibriumReport(p, x, c, b, bb, method, res.oracle_calls, {"certificate": res.certificate})


def _finish(report: EquilibriumReport, tol: float) -> EquilibriumReport:
    if not report.ok(tol):
        raise EquilibriumNotReached(f"worst residual {report.worst():.3g} exceeds {tol:.3g}", report)
    return report


# ---------------------------------------------------------------------------
# Fisher


def _fisher_bounds(market: FisherMarket) -> tuple[float, float]:
    total = float(market.budgets.sum())
    return 1e-3 * float(market.budgets.min()), total


def _fisher_problem(market: FisherMarket) -> tuple[SaddleProblem, _Scaled, _Scaled]:
    nb, ng = market.n_buyers, market.n_goods
    _, _, rate, _ = market.arrays
    p_lo, p_hi = _fisher_bounds(market)
    # At a solution eta_j = 1 + log p_j and lam_i sits at a log bang-per-buck level.
    e_lo, e_hi = math.log(p_lo), math.log(p_hi) + 2.0
    l_lo = math.log(rate.min()) - e_hi - 1.0
    l_hi = math.log(rate.max()) - e_lo + 1.0
    sx = _Scaled(np.concatenate([np.full(ng, e_lo), np.full(nb, l_lo)]),
                 np.concatenate([np.full(ng, e_hi), np.full(nb, l_hi)]))
    sy = _Scaled(np.full(ng, p_lo), np.full(ng, p_hi))
    X, Y = sx.oracle(), sy.oracle()

    def first_order(tx: Array, ty: Array) -> Array:
        v, p = sx.to_v(tx), sy.to_v(ty)
        ev = fisher_game_oracle(market, p, v[:ng], v[ng:])
        g = ev.grads
        gx = np.concatenate([g["eta"], g["lam"]]) * sx.s
        return np.concatenate([gx, -g["p"] * sy.s])

    prob = SaddleProblem(ng + nb, ng, first_order, X, Y, R=1.0, r=1.0)
    return prob, sx, sy


def _fisher_classes(market: FisherMarket, p: Array, tau: float) -> Array:
    """+1 full, 0 tight, -1 unused, from the greedy spending order at ``p``."""
    bi, gj, rate, cap = market.arrays
    bpb = rate / p[gj]
    cls = np.full(bpb.size, -1)
    for i in range(market.n_buyers):
        idx = np.flatnonzero(bi == i)
        order = idx[np.argsort(-bpb[idx], kind="stable")]
        spent, level = 0.0, bpb[order[-1]]
        for k in order:
            spent += cap[k]
            if spent >= market.budgets[i]:
                level = bpb[k]
                break
        for k in idx:
            if bpb[k] > level * (1 + tau):
                cls[k] = 1
            elif bpb[k] >= level * (1 - tau):
                cls[k] = 0
    return cls


def fisher_transport(market: FisherMarket, p: Array, tol: float) -> Array:
    """Spending per segment: full above the buyer's level, split on ties to clear the market."""
    bi, gj, _, cap = market.arrays
    cls = _fisher_classes(market, p, tol)
    tight = np.flatnonzero(cls == 0)
    fixed = np.where(cls == 1, cap, 0.0)
    rows = []
    for i in range(market.n_buyers):
        a = (bi[tight] == i).astype(float)
        rows.append((a, float(market.budgets[i] - fixed[bi == i].sum())))
    for j in range(market.n_goods):
        a = (gj[tight] == j).astype(float)
        rows.append((a, float(p[j] - fixed[gj == j].sum())))
    b = fixed.copy()
    if tight.size:
        bt, _ = _lp_min_residual(tight.size, rows, cap[tight])
        b[tight] = bt
    return b


def fisher_support_polish(market: FisherMarket, cls: Array) -> tuple[Array, Array] | None:
    """Exact prices and spending consistent with the segment classes, or ``None``.

    With ``q_i`` the inverse bang-per-buck level of buyer ``i``: full
    segments have ``u q_i >= p_j``, tight ones equality, unused ones
    ``u q_i <= p_j``; spending clears budgets and prices.
    """
    bi, gj, rate, cap = market.arrays
    nb, ng, ns = market.n_buyers, market.n_goods, rate.size
    nv = ng + nb + ns
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for k in range(ns):
        row = np.zeros(nv)
        row[gj[k]], row[ng + bi[k]] = 1.0, -rate[k]
        if cls[k] == 1:
            A_ub.append(row)
            b_ub.append(0.0)
            e = np.zeros(nv)
            e[ng + nb + k] = 1.0
            A_eq.append(e)
            b_eq.append(cap[k])
        elif cls[k] == 0:
            A_eq.append(row)
            b_eq.append(0.0)
            e = np.zeros(nv)
            e[ng + nb + k] = 1.0
            A_ub.append(e)
            b_ub.append(cap[k])
        else:
            A_ub.append(-row)
            b_ub.append(0.0)
            e = np.zeros(nv)
            e[ng + nb + k] = 1.0
            A_eq.append(e)
            b_eq.append(0.0)
    for i in range(nb):
        row = np.zeros(nv)
        row[ng + nb :][bi == i] = 1.0
        A_eq.append(row)
        b_eq.append(market.budgets[i])
    for j in range(ng):
        row = np.zeros(nv)
        row[ng + nb :][gj == j] = 1.0
        row[j] = -1.0
        A_eq.append(row)
        b_eq.append(0.0)
    try:
        res = linprog_simplex(np.zeros(nv), np.array(A_ub), np.array(b_ub), np.array(A_eq), np.array(b_eq))
    except (LPInfeasible, LPUnbounded):
        return None
    return res.x[:ng], res.x[ng + nb :]


def solve_fisher(
    market: FisherMarket,
    eps_eq: float = 1e-2,
    *,
    seed: int = 0,
    params: VaidyaParams | None = None,
    saddle_eps: float = 0.05,
    polish: bool = True,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> EquilibriumReport:
    """Prices and per-segment allocations ``x = b / p_j`` of a Fisher market."""
    market.validate()
    prob, _, sy = _fisher_problem(market)
    res = solve_saddle(prob, saddle_eps, seed, params or _default_params(), on_trace=on_trace)
    p = sy.to_v(res.y)
    b = fisher_transport(market, p, eps_eq)
    report = _fisher_report(market, p, b, "transport", res)
    if report.ok(eps_eq) or not polish:
        return _finish(report, eps_eq)
    for tau in (1e-3, 1e-2, 3e-2, 1e-1, 3e-1):
        out = fisher_support_polish(market, _fisher_classes(market, p, tau))
        if out is None or np.any(out[0] <= 0):
            continue
        cand = _fisher_report(market, out[0], out[1], "support-polish", res)
        cand.extra["tau"] = tau
        if cand.ok(eps_eq):
            return cand
    return _finish(report, eps_eq)


def _fisher_report(market: FisherMarket, p: Array, b: Array, method: str, res: SaddleResult) -> EquilibriumReport:
    _, gj, _, _ = market.arrays
    x = b / p[gj]
    c, bud, bb = verify_equilibrium_fisher(market, p, x)
    return EquilibriumReport(p, x, c, bud, bb, method, res.oracle_calls, {"certificate": res.certificate})


# ---------------------------------------------------------------------------
# Verifiers


def verify_equilibrium_ad(market: ExchangeMarket, p: Sequence[float], x: Array, tol: float = 1e-9) -> tuple[float, float, float]:
    """(clearing, budget, bang-per-buck) residuals of prices ``p`` and allocation ``x``."""
    u = np.asarray(market.u, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = u.shape[0]
    clearing = max(abs(sum(x[i, j] for i in range(n)) - 1.0) for j in range(n))
    budget = max(abs(p[i] - sum(x[i, j] * p[j] for j in range(n))) for i in range(n))
    worst = 0.0
    for i in range(n):
        best = max(u[i, j] / p[j] for j in range(n))
        for j in range(n):
            if x[i, j] > tol:
                worst = max(worst, (best - u[i, j] / p[j]) / best)
    return float(clearing), float(budget), float(worst)


def verify_equilibrium_fisher(market: FisherMarket, p: Sequence[float], x: Array, tol: float = 1e-9) -> tuple[float, float, float]:
    """(clearing, budget, buyer-optimality) residuals for per-segment amounts ``x``.

    Buyer optimality fails when money goes to a segment while a segment
    with a strictly better rate per unit of money still has room; the
    residual is that relative gap.
    """
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    segs = market.segments
    supply = [0.0] * market.n_goods
    spend = [0.0] * market.n_buyers
    for s, amount in zip(segs, x):
        supply[s.good] += amount
        spend[s.buyer] += amount * p[s.good]
    clearing = max(abs(v - 1.0) for v in supply)
    budget = max(abs(spend[i] - market.budgets[i]) / market.budgets[i] for i in range(market.n_buyers))
    # Spending above a segment cap counts against budget balance too.
    for s, amount in zip(segs, x):
        budget = max(budget, (amount * p[s.good] - s.cap) / s.cap)
    worst = 0.0
    for s, amount in zip(segs, x):
        if amount * p[s.good] <= tol:
            continue
        mine = s.rate / p[s.good]
        for t, other in zip(segs, x):
            if t.buyer != s.buyer or other * p[t.good] >= t.cap - tol:
                continue
            theirs = t.rate / p[t.good]
            if theirs > mine:
                worst = max(worst, (theirs - mine) / theirs)
    return float(clearing), float(budget), float(worst)
