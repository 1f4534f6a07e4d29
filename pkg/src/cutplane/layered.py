"""Three-layer leverage-score maintainer.

An inner simple estimator with a loose tolerance absorbs every action. Every
``T_inn`` actions a tighter middle simple estimator replays the buffered
actions in one batch and overwrites the inner estimate; every ``T_mid``
middle steps an outer sketched estimator with the tightest tolerance does
the same for both. After ``T_out`` outer steps everything is rebuilt from
scratch, which makes the estimate exact again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .actions import ActionCaps, AssumptionViolation, UpdateAction, apply_action, check_action
from .estimators import BatchSettings, ComplicatedEstimator, SimpleEstimator
from .linalg import Array, gram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerParams:
    T_inn: int = 8
    T_mid: int = 8
    T_out: int = 8
    eps_inn: float = 1e-2
    eps_mid: float = 1e-3
    eps_out: float = 1e-4
    r_out: int = 8
    N: int = 6
    eta: float = 1e-3
    L: int | None = None
    batch_tol: float = 1e-8
    update_cap: float = 0.01
    insert_cap: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.T_inn, self.T_mid, self.T_out) < 1:
            raise ValueError("step limits must be at least 1")
        if not 0 < self.eps_out <= self.eps_mid <= self.eps_inn < 1:
            raise ValueError("tolerances must satisfy 0 < eps_out <= eps_mid <= eps_inn < 1")
        if self.r_out < 1 or self.N < 1:
            raise ValueError("r_out and N must be positive")

    @classmethod
    def desk(cls, n: int, **overrides: object) -> "LayerParams":
        """Small-instance profile; keeps the tolerance ordering and cadence."""
        base = cls(r_out=max(8, math.ceil(n**0.31)))
        return replace(base, **overrides)  # type: ignore[arg-type]

    @classmethod
    def asymptotic(cls, n: int, omega: float = 2.373, **overrides: object) -> "LayerParams":
        """Large-``n`` profile with the growth rates of the theory.

        Only meaningful for very large ``n``; at desk scale ``log(n)^10``
        dwarfs ``n`` itself.
        """
        ln = math.log(max(n, 3))
        eps_inn = min(0.5, ln**-25)
        # Keep the ordering valid when the asymptotic formulas cross at small n.
        eps_mid = min(n**-0.08, eps_inn)
        eps_out = min(n**-0.1, eps_mid)
        base = cls(
            T_inn=max(1, round(ln**10)),
            T_mid=max(1, round(n**0.01)),
            T_out=max(1, round(n ** (omega - 2))),
            eps_inn=eps_inn,
            eps_mid=eps_mid,
            eps_out=eps_out,
            r_out=max(1, math.ceil(n**0.31)),
            N=max(1, math.ceil(100 * ln**2)),
            eta=n**-0.08,
        )
        return replace(base, **overrides)  # type: ignore[arg-type]


class LayeredMaintainer:
    """Leverage-score maintainer; ``update`` one action at a time, ``query`` any time."""

    def __init__(self, A: Array, w: Array, params: LayerParams | None = None) -> None:
        self.params = params if params is not None else LayerParams.desk(np.shape(A)[1])
        self.restarts = 0
        self.refines = 0
        self._init(np.array(A, dtype=np.float64), np.array(w, dtype=np.float64))

    def _init(self, A: Array, w: Array) -> None:
        p = self.params
        self.A, self.w = A, w
        self.ctr_inn = self.ctr_mid = self.ctr_out = 0
        self.acts_mid: list[UpdateAction] = []
        self.acts_out: list[UpdateAction] = []
        # Actions were validated on entry; nested replays skip the checks.
        caps = ActionCaps(check=False)
        batch = BatchSettings(tol=p.batch_tol, eta=p.eta, L=p.L, caps=caps)
        self.simp_inn = SimpleEstimator(A, w, p.eps_inn, batch)
        self.simp_mid = SimpleEstimator(A, w, p.eps_mid, batch)
        self.comp_out = ComplicatedEstimator(
            A, w, p.eps_out, r=p.r_out, N=p.N, seed=p.seed, batch=batch
        )

    @property
    def caps(self) -> ActionCaps:
        return ActionCaps(update_cap=self.params.update_cap, insert_cap=self.params.insert_cap)

    def query(self) -> Array:
        return self.simp_inn.query()

    def validate(self, act: UpdateAction) -> None:
        """Raise :class:`AssumptionViolation` if ``act`` would be rejected."""
        Minv = None
        if not hasattr(act, "w_new"):
            Minv = gram(self.A, self.w).inverse()
        check_action(self.A, self.w, act, self.caps, Minv)

    def update(self, act: UpdateAction) -> None:
        self.validate(act)
        self.A, self.w = apply_action(self.A, self.w, act)
        self.acts_mid.append(act)
        self.acts_out.append(act)
        self.simp_inn.update([act])
        self.ctr_inn += 1
        if self.ctr_inn < self.params.T_inn:
            return
        self.simp_mid.update(self.acts_mid)
        self.acts_mid = []
        self.ctr_mid += 1
        if self.ctr_mid < self.params.T_mid:
            self.ctr_inn = 0
            self.simp_inn.refine(self.simp_mid.query())
            self.refines += 1
            return
        self.comp_out.update(self.acts_out)
        self.acts_out = []
        self.ctr_out += 1
        if self.ctr_out >= self.params.T_out:
            log.debug("restarting leverage maintainer after %d outer steps", self.ctr_out)
            self.restarts += 1
            self._init(self.simp_inn.A.copy(), self.simp_inn.w.copy())
            return
        self.ctr_inn = self.ctr_mid = 0
        outer = self.comp_out.query()
        self.simp_inn.refine(outer)
        self.simp_mid.refine(outer)
        self.refines += 1

    def try_update(self, act: UpdateAction) -> bool:
        """Like :meth:`update` but returns ``False`` on a rejected action."""
        try:
            self.update(act)
        except AssumptionViolation as exc:
            log.info("rejected action: %s", exc)
            return False
        return True
