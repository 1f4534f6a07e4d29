"""Update actions consumed by every leverage-score maintainer.

An action is one of three things: a full new weight vector, an appended row,
or the removal of a row by its current index. Sequences are replayed onto a
*universe* matrix that holds every row that ever appears; absent rows carry
weight zero there, which turns inserts and deletes into ordinary rank-one
weight changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .linalg import Array, gram


class AssumptionViolation(ValueError):
    """An action breaks the small-update assumption; nothing was applied."""


@dataclass(frozen=True)
class WeightUpdate:
    w_new: Array

    def __post_init__(self) -> None:
        object.__setattr__(self, "w_new", np.array(self.w_new, dtype=np.float64))


@dataclass(frozen=True)
class Insert:
    row: Array
    weight: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "row", np.array(self.row, dtype=np.float64).ravel())
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class Delete:
    index: int


UpdateAction = Union[WeightUpdate, Insert, Delete]


@dataclass(frozen=True)
class ActionCaps:
    """Limits checked before an action is accepted.

    ``update_cap`` bounds ``||log w_new - log w||_2``; ``insert_cap`` bounds
    the leverage ``w_a a^T M^{-1} a`` of an inserted or deleted row;
    ``max_actions`` bounds the sequence length.
    """

    update_cap: float = 0.01
    insert_cap: float = 0.01
    max_actions: int = 64
    check: bool = True


def apply_action(A: Array, w: Array, act: UpdateAction) -> tuple[Array, Array]:
    """Return the ``(A, w)`` snapshot after ``act`` without any checks."""
    if isinstance(act, WeightUpdate):
        if act.w_new.shape != w.shape:
            raise AssumptionViolation(
                f"weight update has length {act.w_new.size}, expected {w.size}"
            )
        return A, act.w_new.copy()
    if isinstance(act, Insert):
        if act.row.size != A.shape[1]:
            raise AssumptionViolation(f"inserted row has length {act.row.size}, expected {A.shape[1]}")
        return np.vstack([A, act.row]), np.append(w, act.weight)
    if isinstance(act, Delete):
        if not 0 <= act.index < A.shape[0]:
            raise AssumptionViolation(f"delete index {act.index} out of range for {A.shape[0]} rows")
        keep = np.arange(A.shape[0]) != act.index
        return A[keep], w[keep]
    raise TypeError(f"unknown action {act!r}")


def check_action(
    A: Array,
    w: Array,
    act: UpdateAction,
    caps: ActionCaps,
    Minv: Array | None = None,
) -> None:
    """Raise :class:`AssumptionViolation` if ``act`` is not a small update.

    ``Minv`` may be supplied to skip the factorization of ``A^T W A``.
    """
    if isinstance(act, WeightUpdate):
        w_new = act.w_new
        if w_new.shape != w.shape:
            raise AssumptionViolation(f"weight update has length {w_new.size}, expected {w.size}")
        if not np.all(np.isfinite(w_new)) or np.any(w_new <= 0):
            raise AssumptionViolation("updated weights must be positive and finite")
        if not caps.check:
            return
        step = float(np.linalg.norm(np.log(w_new) - np.log(w)))
        if step > caps.update_cap * (1 + 1e-12):
            raise AssumptionViolation(
                f"||log w_new - log w||_2 = {step:.4g} exceeds the cap {caps.update_cap}"
            )
        return
    if isinstance(act, Insert):
        if act.row.size != A.shape[1]:
            raise AssumptionViolation(f"inserted row has length {act.row.size}, expected {A.shape[1]}")
        if not (np.isfinite(act.weight) and act.weight > 0) or not np.all(np.isfinite(act.row)):
            raise AssumptionViolation("inserted row and weight must be finite with positive weight")
        a, wa = act.row, act.weight
    elif isinstance(act, Delete):
        if not 0 <= act.index < A.shape[0]:
            raise AssumptionViolation(f"delete index {act.index} out of range for {A.shape[0]} rows")
        if A.shape[0] - 1 < A.shape[1]:
            raise AssumptionViolation("delete would leave fewer rows than columns")
        a, wa = A[act.index], float(w[act.index])
    else:
        raise TypeError(f"unknown action {act!r}")
    if not caps.check:
        return
    lev = wa * float(a @ (Minv @ a)) if Minv is not None else wa * float(a @ gram(A, w).solve(a))
    if lev > caps.insert_cap * (1 + 1e-12):
        raise AssumptionViolation(f"row leverage {lev:.4g} exceeds the cap {caps.insert_cap}")


@dataclass
class Replay:
    """A sequence replayed onto the universe of rows.

    ``W[k]`` is the universe weight vector after ``k`` actions (zero for rows
    that are absent), and ``rows[k]`` lists the universe ids of the rows
    present at that point, in their current order.
    """

    A0: Array
    AU: Array
    W: Array
    rows: list[list[int]]
    actions: list[UpdateAction] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.actions)

    @property
    def m0(self) -> int:
        return self.A0.shape[0]

    def snapshot(self, k: int) -> tuple[Array, Array]:
        ids = self.rows[k]
        return self.AU[ids], self.W[k][ids]

    def final_origin(self) -> Array:
        """Original row index for each final row, ``-1`` for inserted rows."""
        ids = np.asarray(self.rows[-1], dtype=np.intp)
        return np.where(ids < self.m0, ids, -1)


def replay(
    A: Array,
    w: Array,
    actions: Sequence[UpdateAction],
    caps: ActionCaps | None = None,
) -> Replay:
    """Validate ``actions`` one by one and build the universe view."""
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    caps = caps if caps is not None else ActionCaps()
    actions = list(actions)
    if caps.check and len(actions) > caps.max_actions:
        raise AssumptionViolation(f"{len(actions)} actions exceed the cap {caps.max_actions}")
    extra = [act.row for act in actions if isinstance(act, Insert)]
    AU = np.vstack([A, *extra]) if extra else A.copy()
    mU = AU.shape[0]
    W = np.zeros((len(actions) + 1, mU))
    W[0, : A.shape[0]] = w
    rows: list[list[int]] = [list(range(A.shape[0]))]
    next_id = A.shape[0]
    Ak, wk = A, w
    for k, act in enumerate(actions, start=1):
        check_action(Ak, wk, act, caps)
        cur = list(rows[-1])
        Wk = W[k - 1].copy()
        if isinstance(act, WeightUpdate):
            Wk[cur] = act.w_new
        elif isinstance(act, Insert):
            Wk[next_id] = act.weight
            cur.append(next_id)
            next_id += 1
        else:
            Wk[cur[act.index]] = 0.0
            del cur[act.index]
        W[k] = Wk
        rows.append(cur)
        Ak, wk = apply_action(Ak, wk, act)
    return Replay(A0=A, AU=AU, W=W, rows=rows, actions=actions)
