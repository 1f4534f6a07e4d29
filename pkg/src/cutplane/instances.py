"""JSON instance builders for each command.

Every instance carries ``schema_version`` and ``kind``. Numbers may be JSON
numbers or decimal strings; integer utilities must parse exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .config import ConfigError, check_schema, integer, matrix, number, vector
from .convex import FunctionOracle
from .linalg import Array
from .markets import ExchangeMarket, FisherMarket, Segment
from .oracles import BallOracle, EmptySetAdversary, HalfspaceOracle, SeparationOracle
from .saddle import SaddleProblem


def _box(n: int, hw: float) -> HalfspaceOracle:
    return HalfspaceOracle(np.vstack([np.eye(n), -np.eye(n)]), np.full(2 * n, hw))


def _get(data: dict, key: str) -> Any:
    if key not in data:
        raise ConfigError(f"missing field {key!r}")
    return data[key]


# Feasibility ---------------------------------------------------------------


@dataclass
class FeasibilityInstance:
    oracle: SeparationOracle
    R: float
    eps: float


def feasibility_instance(data: dict) -> FeasibilityInstance:
    check_schema(data, "feasibility")
    spec = _get(data, "oracle")
    kind = spec.get("type")
    oracle: SeparationOracle
    if kind == "ball":
        oracle = BallOracle(vector(_get(spec, "center"), "center"), number(_get(spec, "radius"), "radius"))
    elif kind == "halfspaces":
        oracle = HalfspaceOracle(matrix(_get(spec, "G"), "G"), vector(_get(spec, "h"), "h"))
    elif kind == "empty":
        oracle = EmptySetAdversary(integer(_get(spec, "n"), "n"))
    else:
        raise ConfigError(f"unknown oracle type {kind!r}")
    R, eps = number(_get(data, "R"), "R"), number(_get(data, "eps"), "eps")
    if not R > 0 or not eps > 0:
        raise ConfigError("R and eps must be positive")
    return FeasibilityInstance(oracle, R, eps)


# Convex --------------------------------------------------------------------


@dataclass
class ConvexInstance:
    f: FunctionOracle
    S: SeparationOracle
    R: float
    alpha: float
    f_min: float
    f_max: float


def convex_instance(data: dict) -> ConvexInstance:
    check_schema(data, "convex")
    obj = _get(data, "objective")
    dom = _get(data, "domain")
    if dom.get("type") != "box":
        raise ConfigError("only box domains are supported")
    hw = number(_get(dom, "half_width"), "half_width")
    kind = obj.get("type")
    if kind == "quadratic":
        c = vector(_get(obj, "center"), "center")
        n = c.size
        f = FunctionOracle(lambda x: float(np.sum((x - c) ** 2)), lambda x: 2.0 * (x - c))
        near = np.clip(c, -hw, hw)
        f_min = float(np.sum((near - c) ** 2))
        f_max = float(np.sum(np.maximum((hw - c) ** 2, (hw + c) ** 2)))
    elif kind == "linear":
        c = vector(_get(obj, "c"), "c")
        n = c.size
        f = FunctionOracle(lambda x: float(c @ x), lambda x: c.copy())
        f_min, f_max = -hw * float(np.abs(c).sum()), hw * float(np.abs(c).sum())
    elif kind == "max":
        n = integer(_get(obj, "n"), "n")
        f = FunctionOracle(lambda x: float(np.max(x)), lambda x: np.eye(x.size)[int(np.argmax(x))])
        f_min, f_max = -hw, hw
    else:
        raise ConfigError(f"unknown objective type {kind!r}")
    alpha = number(_get(data, "alpha"), "alpha")
    R = number(data.get("R", hw), "R")
    if R < hw:
        raise ConfigError("R must cover the domain")
    return ConvexInstance(f, _box(n, hw), R, alpha, f_min, f_max)


# Saddle --------------------------------------------------------------------


@dataclass
class SaddleInstance:
    problem: SaddleProblem
    eps: float
    gap: Callable[[Array, Array], float]


def saddle_instance(data: dict) -> SaddleInstance:
    """Games on ``[-1, 1]^n x [-1, 1]^m`` with an analytic duality gap."""
    check_schema(data, "saddle")
    game = _get(data, "game")
    kind = game.get("type")
    if kind == "bilinear":
        C = matrix(_get(game, "C"), "C")
        n, m = C.shape
        d = vector(game.get("d", [0] * n), "d")
        e = vector(game.get("e", [0] * m), "e")
        if d.size != n or e.size != m:
            raise ConfigError("d and e must match the shape of C")

        def fo(x: Array, y: Array) -> Array:
            return np.concatenate([C @ y + d, -(C.T @ x + e)])

        def gap(x: Array, y: Array) -> float:
            return float(d @ x + np.abs(C.T @ x + e).sum() - e @ y + np.abs(C @ y + d).sum())

        s = np.linalg.norm(C, 2)
        L = float(np.hypot(s * np.sqrt(m) + np.linalg.norm(d), s * np.sqrt(n) + np.linalg.norm(e)))
        value = lambda x, y: float(x @ C @ y + d @ x + e @ y)  # noqa: E731
    elif kind == "separable":
        a, b = vector(_get(game, "a"), "a"), vector(_get(game, "b"), "b")
        n, m = a.size, b.size

        def fo(x: Array, y: Array) -> Array:
            return np.concatenate([2 * (x - a), 2 * (y - b)])

        def gap(x: Array, y: Array) -> float:
            return float((x - a) @ (x - a) + (y - b) @ (y - b))

        L = 2.0 * float(np.sqrt(np.sum((1 + np.abs(a)) ** 2) + np.sum((1 + np.abs(b)) ** 2)))
        value = lambda x, y: float((x - a) @ (x - a) - (y - b) @ (y - b))  # noqa: E731
    else:
        raise ConfigError(f"unknown game type {kind!r}")
    if kind == "separable" and (np.any(np.abs(a) >= 1) or np.any(np.abs(b) >= 1)):
        raise ConfigError("saddle point must lie inside the box")
    prob = SaddleProblem(n, m, fo, _box(n, 1.0), _box(m, 1.0), R=1.0, r=1.0, L=L, value=value)
    return SaddleInstance(prob, number(_get(data, "eps"), "eps"), gap)


# Markets -------------------------------------------------------------------


def ad_instance(data: dict) -> tuple[ExchangeMarket, float | None]:
    check_schema(data, "market_ad")
    rows = _get(data, "u")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("u must be a non-empty list of rows")
    u = np.array([[integer(v, "u") for v in row] for row in rows], dtype=np.float64)
    eps = data.get("eps_eq")
    try:
        return ExchangeMarket(u), None if eps is None else number(eps, "eps_eq")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fisher_instance(data: dict) -> tuple[FisherMarket, float | None]:
    check_schema(data, "market_fisher")
    budgets = vector(_get(data, "budgets"), "budgets")
    n_goods = integer(_get(data, "n_goods"), "n_goods")
    segs = []
    for s in _get(data, "segments"):
        segs.append(
            Segment(
                integer(_get(s, "buyer"), "buyer"),
                integer(_get(s, "good"), "good"),
                number(_get(s, "rate"), "rate"),
                number(_get(s, "cap"), "cap"),
            )
        )
    eps = data.get("eps_eq")
    return FisherMarket(budgets, n_goods, segs), None if eps is None else number(eps, "eps_eq")
