"""Convex-concave saddle points through the cutting-plane method.

The joint variable ``z = (x, y)`` lives in ``B_inf(0, R)``. At a query point
inside ``X x Y`` the cut is ``{z' : (z' - z)^T g(z) <= 0}`` with
``g = (grad_x f, -grad_y f)``; outside, the domain separator is used with its
normal rescaled to length ``beta``. After the run, the surviving constraints
and the box faces form the transcript. A small LP yields multipliers
``lambda`` whose feasible part averages the query points into the answer and
whose value bounds the duality gap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .layered import LayerParams
from .linalg import Array
from .oracles import Inside, OracleAnswer, SeparationOracle, Separator
from .simplex import LPInfeasible, linprog_simplex
from .vaidya import PolytopeState, TraceRow, VaidyaParams, run_feasibility

log = logging.getLogger(__name__)


class CertificateError(RuntimeError):
    """The multiplier LP broke one of its guaranteed properties."""


@dataclass
class SaddleProblem:
    """``min_{x in X} max_{y in Y} f(x, y)``.

    ``first_order(x, y)`` returns the stacked vector ``(grad_x f, -grad_y f)``.
    ``L`` bounds its norm on ``X x Y``; when left as ``None`` the largest
    norm observed during the run is used instead.
    """

    n: int
    m: int
    first_order: Callable[[Array, Array], Array]
    X: SeparationOracle
    Y: SeparationOracle
    R: float
    r: float
    L: float | None = None
    value: Callable[[Array, Array], float] | None = None

    @property
    def dim(self) -> int:
        return self.n + self.m


@dataclass
class GameTranscript:
    """Records ``(z_k, g_k, feasible_k)`` for the constraints in ``I``."""

    z: Array
    g: Array
    feasible: Array
    beta: float
    R: float

    def __post_init__(self) -> None:
        norms = np.linalg.norm(self.g, axis=1)
        if np.any(norms > self.beta * (1 + 1e-9)):
            raise ValueError("a recorded vector is longer than beta")

    def __len__(self) -> int:
        return self.z.shape[0]

    @property
    def offsets(self) -> Array:
        return np.einsum("ij,ij->i", self.z, self.g)


def box_faces(dim: int, R: float, beta: float) -> tuple[Array, Array]:
    """Face centers and outward normals (length ``beta``) of ``B_inf(0, R)``."""
    eye = np.eye(dim)
    z = np.vstack([R * eye, -R * eye])
    g = np.vstack([beta * eye, -beta * eye])
    return z, g


def gap_value(tr: GameTranscript, z: Array) -> float:
    """``gamma(z) = min_k (z_k - z)^T g_k``."""
    return float(np.min(tr.offsets - tr.g @ np.asarray(z, dtype=np.float64)))


def lagrange_multipliers(tr: GameTranscript, eta_tol: float = 1e-6) -> Array:
    """Multipliers on the simplex making ``sum_k lambda_k gamma_k`` constant and minimal.

    Solves ``min c^T lambda`` subject to ``sum_k lambda_k g_k = 0`` and
    ``sum_k lambda_k = 1`` with ``c_k = z_k^T g_k``; the optimal value equals
    ``max_z gamma(z)``.
    """
    if len(tr) == 0:
        raise ValueError("empty transcript")
    G = tr.g.T
    A_eq = np.vstack([G, np.ones((1, len(tr)))])
    b_eq = np.append(np.zeros(G.shape[0]), 1.0)
    try:
        res = linprog_simplex(tr.offsets, A_eq=A_eq, b_eq=b_eq, tol=1e-12)
    except LPInfeasible as exc:
        raise CertificateError("multiplier LP is infeasible") from exc
    lam = res.x / res.x.sum()
    resid = float(np.abs(G @ lam).sum())
    bound = eta_tol * math.sqrt(G.shape[0]) * tr.beta
    if resid > bound:
        raise CertificateError(f"multiplier residual {resid:.3g} exceeds {bound:.3g}")
    return lam


@dataclass(frozen=True)
class SaddleResult:
    x: Array
    y: Array
    certificate: float
    lam: Array
    feasible_mass: float
    transcript: GameTranscript
    oracle_calls: int
    exact: bool = False


@dataclass
class _Record:
    z: Array
    direction: Array
    feasible: bool


class _GameOracle:
    """Separation oracle for the saddle set; keeps one record per cut."""

    def __init__(self, prob: SaddleProblem) -> None:
        self.prob = prob
        self.n = prob.dim
        self.records: dict[int, _Record] = {}
        self.max_grad = 0.0
        self.stationary: Array | None = None
        self.next_tag = 0

    def _domain(self, x: Array, y: Array) -> Separator | None:
        p = self.prob
        ans = p.X.query(x)
        if isinstance(ans, Separator):
            return Separator(np.concatenate([ans.a, np.zeros(p.m)]), 0.0)
        ans = p.Y.query(y)
        if isinstance(ans, Separator):
            return Separator(np.concatenate([np.zeros(p.n), ans.a]), 0.0)
        return None

    def query(self, z: Array) -> OracleAnswer:
        p = self.prob
        z = np.asarray(z, dtype=np.float64)
        x, y = z[: p.n], z[p.n :]
        sep = self._domain(x, y)
        if sep is None:
            g = np.asarray(p.first_order(x, y), dtype=np.float64)
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                self.stationary = z.copy()
                return Inside(z.copy())
            self.max_grad = max(self.max_grad, norm)
            rec = _Record(z.copy(), g, True)
        else:
            a = sep.a / np.linalg.norm(sep.a)
            rec = _Record(z.copy(), a, False)
        self.records[self.next_tag] = rec
        return Separator(rec.direction, float(rec.direction @ z))


def solve_saddle(
    prob: SaddleProblem,
    eps: float,
    seed: int = 0,
    params: VaidyaParams | None = None,
    *,
    eta_tol: float = 1e-6,
    on_trace: Callable[[TraceRow], None] | None = None,
) -> SaddleResult:
    """Approximate saddle point with duality gap target ``eps * L * r``."""
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    dim = prob.dim
    params = params if params is not None else VaidyaParams.desk(C_iter=35.0, exact_leverage=True)
    if params.layers is None:
        params = replace(params, layers=LayerParams.desk(dim, seed=seed))
    st = PolytopeState(dim, prob.R, params)
    oracle = _GameOracle(prob)

    # The tag of the upcoming cut must be known before the record is stored.
    class _Tagged:
        n = dim

        def query(self, z: Array) -> OracleAnswer:
            oracle.next_tag = st.next_tag
            return oracle.query(z)

    out = run_feasibility(_Tagged(), prob.R, eps * prob.r, params, state=st, on_trace=on_trace)
    calls = out.oracle_calls
    if oracle.stationary is not None:
        z = oracle.stationary
        tr = GameTranscript(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0, bool), 1.0, prob.R)
        return SaddleResult(z[: prob.n], z[prob.n :], 0.0, np.zeros(0), 1.0, tr, calls, exact=True)

    L = prob.L if prob.L is not None else oracle.max_grad
    if oracle.max_grad > L * (1 + 1e-9):
        log.warning("observed gradient norm %.3g exceeds L = %.3g; using it", oracle.max_grad, L)
        L = oracle.max_grad
    beta = 3.0 * math.sqrt(dim) * L
    kept = [int(t) for t, box in zip(st.tags, st.box) if not box]
    recs = [oracle.records[t] for t in kept]
    zb, gb = box_faces(dim, prob.R, beta)
    Z = np.vstack([zb] + [r.z[None] for r in recs])
    Gm = np.vstack([gb] + [(r.direction if r.feasible else beta * r.direction)[None] for r in recs])
    feas = np.array([False] * len(zb) + [r.feasible for r in recs])
    tr = GameTranscript(Z, Gm, feas, beta, prob.R)
    lam = lagrange_multipliers(tr, eta_tol)
    mass = float(lam[feas].sum())
    if not mass > 0.5:
        raise CertificateError(f"feasible multiplier mass {mass:.3g} is not above 1/2")
    zhat = (lam[feas] @ Z[feas]) / mass
    # max over the box of sum_I lambda_k gamma_k, bounded through the residual.
    resid = float(np.abs(Gm.T @ lam).sum())
    cert = (float(lam @ tr.offsets) + resid * prob.R) / mass
    log.info("saddle run: %d calls, |I| = %d, certificate %.3g", calls, len(tr), cert)
    return SaddleResult(zhat[: prob.n], zhat[prob.n :], cert, lam, mass, tr, calls)


def duality_gap_bound(res: SaddleResult, z: Array) -> float:
    """``sum_{k in J} lambda_k gamma_k(z) / sum_{k in J} lambda_k`` at a test point ``z``."""
    tr = res.transcript
    J = tr.feasible
    vals = tr.offsets[J] - tr.g[J] @ np.asarray(z, dtype=np.float64)
    return float(res.lam[J] @ vals) / res.feasible_mass


__all__ = [
    "CertificateError",
    "GameTranscript",
    "SaddleProblem",
    "SaddleResult",
    "box_faces",
    "duality_gap_bound",
    "gap_value",
    "lagrange_multipliers",
    "solve_saddle",
]
