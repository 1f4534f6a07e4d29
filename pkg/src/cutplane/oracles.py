"""Separation oracles.

A separation oracle answers a query point ``x`` with :class:`Inside` or with
a :class:`Separator` ``(a, b)`` such that the target set lies in
``{y : a^T y <= b}`` while ``a^T x >= b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Union

import numpy as np

from .linalg import Array


@dataclass(frozen=True)
class Inside:
    x: Array


@dataclass(frozen=True)
class Separator:
    a: Array
    b: float


OracleAnswer = Union[Inside, Separator]


class SeparationOracle(Protocol):
    n: int

    def query(self, x: Array) -> OracleAnswer: ...


@dataclass
class BallOracle:
    """Euclidean ball ``{y : |y - center| <= radius}``."""

    center: Array
    radius: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def n(self) -> int:
        return self.center.size

    def contains(self, x: Array) -> bool:
        return bool(np.linalg.norm(np.asarray(x) - self.center) <= self.radius)

    def query(self, x: Array) -> OracleAnswer:
        x = np.asarray(x, dtype=np.float64)
        diff = x - self.center
        dist = float(np.linalg.norm(diff))
        if dist <= self.radius:
            return Inside(x.copy())
        a = diff / dist
        return Separator(a, float(a @ self.center) + self.radius)


@dataclass
class HalfspaceOracle:
    """Polyhedron ``{y : G y <= h}``; separates with the most violated row."""

    G: Array
    h: Array

    def __post_init__(self) -> None:
        self.G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        self.h = np.asarray(self.h, dtype=np.float64).ravel()
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h disagree on the number of halfspaces")

    @property
    def n(self) -> int:
        return self.G.shape[1]

    def contains(self, x: Array) -> bool:
        return bool(np.all(self.G @ x <= self.h))

    def query(self, x: Array) -> OracleAnswer:
        x = np.asarray(x, dtype=np.float64)
        norms = np.linalg.norm(self.G, axis=1)
        viol = (self.G @ x - self.h) / np.where(norms > 0, norms, 1.0)
        i = int(np.argmax(viol))
        if viol[i] <= 0:
            return Inside(x.copy())
        return Separator(self.G[i].copy(), float(self.h[i]))


@dataclass
class EmptySetAdversary:
    """Never accepts: cuts every query with a central cut along cycling axes."""

    n: int
    calls: int = 0

    def query(self, x: Array) -> OracleAnswer:
        x = np.asarray(x, dtype=np.float64)
        k = self.calls
        self.calls += 1
        a = np.zeros(self.n)
        a[k % self.n] = 1.0 if (k // self.n) % 2 == 0 else -1.0
        return Separator(a, float(a @ x))
