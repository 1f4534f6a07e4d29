"""Gauss-Legendre rules on [0, 1] and tensor-product integration."""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray


class QuadratureEvaluationError(ArithmeticError):
    """The integrand returned a non-finite value at a node."""


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in (0, 1), ascending, with non-negative weights summing to one."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]

    @property
    def N(self) -> int:
        return len(self.nodes)

    def as_arrays(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return np.array(self.nodes), np.array(self.weights)


@lru_cache(maxsize=64)
def gauss_rule(N: int) -> QuadratureRule:
    """Golub-Welsch: eigen-decompose the Legendre Jacobi matrix, then map to [0, 1]."""
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    k = np.arange(1, N, dtype=np.float64)
    offdiag = k / np.sqrt(4.0 * k * k - 1.0)
    if N == 1:
        x, V = np.zeros(1), np.ones((1, 1))
    else:
        x, V = sla.eigh_tridiagonal(np.zeros(N), offdiag)
    # The Legendre weight has total mass 2 on [-1, 1]; after the affine map
    # to [0, 1] each weight is half of 2 * v_0^2.
    w = V[0, :] ** 2
    order = np.argsort(x)
    x, w = x[order], w[order]
    # Legendre nodes are symmetric; enforce it to kill round-off drift.
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    nodes = 0.5 * (x + 1.0)
    return QuadratureRule(nodes=tuple(float(v) for v in nodes), weights=tuple(float(v) for v in w))


def integrate_1d(f: Callable[[float], float], rule: QuadratureRule) -> float:
    total = 0.0
    for s, om in zip(rule.nodes, rule.weights):
        val = float(f(s))
        if not math.isfinite(val):
            raise QuadratureEvaluationError(f"integrand is {val} at t={s}")
        total += om * val
    return total


def integrate_tensor(f: Callable[..., float], d: int, rule: QuadratureRule) -> float:
    """Tensor-product rule over [0, 1]^d; ``f`` takes ``d`` scalar arguments."""
    if d < 1:
        raise ValueError("d must be >= 1")
    total = 0.0
    idx = range(rule.N)
    for combo in itertools.product(idx, repeat=d):
        pt = [rule.nodes[i] for i in combo]
        weight = math.prod(rule.weights[i] for i in combo)
        val = float(f(*pt))
        if not math.isfinite(val):
            raise QuadratureEvaluationError(f"integrand is {val} at {pt}")
        total += weight * val
    return total
