"""Convex minimization by reduction to feasibility.

Every query point that lies in ``S`` is cut by its subgradient halfspace
``{y : g^T y <= g^T x}``, which keeps every minimizer; points outside ``S``
are cut by the domain separator. The best feasible query seen is returned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .linalg import Array
from .oracles import Inside, OracleAnswer, SeparationOracle, Separator
from .vaidya import NoBallOfRadius, TraceRow, VaidyaParams, run_feasibility

log = logging.getLogger(__name__)


class SubgradientOracle(Protocol):
    def eval(self, x: Array) -> tuple[float, Array]: ...


@dataclass
class FunctionOracle:
    """Adapter turning a pair of callables into a :class:`SubgradientOracle`."""

    f: Callable[[Array], float]
    grad: Callable[[Array], Array]

    def eval(self, x: Array) -> tuple[float, Array]:
        return float(self.f(x)), np.asarray(self.grad(x), dtype=np.float64)


class NoFeasibleQueryError(RuntimeError):
    """The budget ran out before any query point landed in ``S``."""


@dataclass(frozen=True)
class ConvexResult:
    x: Array
    value: float
    oracle_calls: int
    feasible_queries: int


class LevelSetOracle:
    """Separation oracle for the sublevel sets of ``f`` restricted to ``S``."""

    def __init__(self, f: SubgradientOracle, S: SeparationOracle) -> None:
        self.f, self.S = f, S
        self.n = S.n
        self.best_x: Array | None = None
        self.best_f = math.inf
        self.feasible = 0

    def query(self, x: Array) -> OracleAnswer:
        ans = self.S.query(x)
        if isinstance(ans, Separator):
            return ans
        self.feasible += 1
        fx, g = self.f.eval(x)
        if fx < self.best_f:
            self.best_f, self.best_x = fx, np.array(x, dtype=np.float64)
        if not np.any(g):
            # A zero subgradient certifies optimality.
            return Inside(np.array(x, dtype=np.float64))
        return Separator(g, float(g @ x))


def minimize_convex(
    f: SubgradientOracle,
    S: SeparationOracle,
    R: float,
    alpha: float,
    params: VaidyaParams | None = None,
    *,
    inner_radius: float | None = None,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> ConvexResult:
    """Return ``x`` in ``S`` with ``f(x) - min f <= alpha (max f - min f)`` over ``S``.

    ``inner_radius`` is a lower bound on the radius of a ball inside ``S``
    (``R`` by default, which is right when ``S`` is the box itself). The run
    stops once the volume argument rules out a ball of radius
    ``alpha * inner_radius``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    params = params if params is not None else VaidyaParams.desk(C_iter=35.0, exact_leverage=True)
    rad = R if inner_radius is None else inner_radius
    oracle = LevelSetOracle(f, S)
    out = run_feasibility(oracle, R, alpha * rad, params, on_trace=on_trace)
    if oracle.best_x is None:
        raise NoFeasibleQueryError("no query point was feasible; enlarge the budget")
    calls = out.oracle_calls
    if isinstance(out, NoBallOfRadius):
        log.debug("level-set run used its full budget of %d calls", calls)
    return ConvexResult(oracle.best_x, oracle.best_f, calls, oracle.feasible)
