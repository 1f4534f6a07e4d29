"""Seeded Gaussian sketches for unbiased inner-product estimates.

Seeds for the many independent sketches used by one estimator update are
derived from a master seed and an integer path (phase counters, node
indices, a tag) through :class:`numpy.random.SeedSequence`, whose
``spawn_key`` mechanism hashes the path into an independent stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

_U64 = (1 << 64) - 1


def derive_seed(master: int, *path: int) -> int:
    """Deterministic 64-bit child seed for ``(master, *path)``."""
    if master < 0 or any(p < 0 for p in path):
        raise ValueError("seed and path components must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master) & _U64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class GaussianSketch:
    """``r x m`` matrix with i.i.d. N(0, 1/r) entries, reproducible from ``seed``."""

    r: int
    m: int
    seed: int
    matrix: NDArray[np.float64] = field(repr=False, compare=False)

    def apply(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.matrix @ X


def make_sketch(r: int, m: int, seed: int) -> GaussianSketch:
    if r < 1 or m < 1:
        raise ValueError(f"sketch dimensions must be positive, got r={r}, m={m}")
    rng = np.random.Generator(np.random.PCG64(int(seed) & _U64))
    R = rng.standard_normal((r, m)) / np.sqrt(r)
    R.setflags(write=False)
    return GaussianSketch(r=r, m=m, seed=int(seed), matrix=R)


def sketched_inner(R: GaussianSketch, x: NDArray[np.float64], y: NDArray[np.float64]) -> float:
    """``(R x)^T (R y)``; unbiased for ``x^T y`` with variance at most ``3/r |x|^2 |y|^2``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (R.m,) or y.shape != (R.m,):
        raise ValueError(f"vectors must have length {R.m}, got {x.shape} and {y.shape}")
    return float((R.matrix @ x) @ (R.matrix @ y))
