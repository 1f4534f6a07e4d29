"""Benchmark: leverage maintainers against exact recomputation on a weight stream."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .actions import ActionCaps, WeightUpdate
from .estimators import BatchSettings, SimpleEstimator
from .layered import LayeredMaintainer, LayerParams
from .linalg import Array, leverage_scores_exact

BENCH_FIELDS = ("step", "drift_simple", "drift_layered", "time_exact", "time_simple", "time_layered")


@dataclass(frozen=True)
class BenchSpec:
    n: int = 16
    m: int = 48
    K: int = 100
    step: float = 0.009
    eps_simple: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < self.n:
            raise ValueError("need m >= n >= 1")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not 0 < self.step < 0.01:
            raise ValueError("step must lie in (0, 0.01) to respect the update cap")


def weight_stream(spec: BenchSpec, seed: int) -> tuple[Array, Array, list[Array]]:
    """Random ``A``, starting weights and ``K`` weight vectors with log-steps of norm ``step``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((spec.m, spec.n))
    w = np.exp(0.5 * rng.standard_normal(spec.m))
    out, cur = [], w.copy()
    for _ in range(spec.K):
        d = rng.standard_normal(spec.m)
        cur = cur * np.exp(spec.step * d / np.linalg.norm(d))
        out.append(cur.copy())
    return A, w, out


def bench_leverage(spec: BenchSpec, seed: int, *, timing: bool = True) -> Iterator[tuple]:
    """Yield one row per step, in :data:`BENCH_FIELDS` order.

    The simple estimator runs at the inner tolerance of the layered one, so
    both spend the same per-step effort on the cheap path.
    """
    A, w, stream = weight_stream(spec, seed)
    layers = LayerParams.desk(spec.n, seed=seed)
    eps = spec.eps_simple if spec.eps_simple is not None else layers.eps_inn
    simple = SimpleEstimator(A, w, eps, BatchSettings(caps=ActionCaps(check=False)))
    layered = LayeredMaintainer(A, w, layers)
    clock = time.perf_counter if timing else (lambda: 0.0)
    for k, w_new in enumerate(stream, start=1):
        t0 = clock()
        exact = leverage_scores_exact(A, w_new)
        t1 = clock()
        simple.update([WeightUpdate(w_new)])
        t2 = clock()
        layered.update(WeightUpdate(w_new))
        t3 = clock()
        yield (
            k,
            float(np.linalg.norm(simple.query() - exact)),
            float(np.linalg.norm(layered.query() - exact)),
            t1 - t0,
            t2 - t1,
            t3 - t2,
        )
