"""Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Every line reports the measured statistic next to its threshold, plus the
runtime against the time limit.
"""

import itertools
import json
import math
import sys
import time

import numpy as np
import pytest

from cutplane.actions import WeightUpdate
from cutplane.batched import batched_update
from cutplane.cli import main as cli_main
from cutplane.convex import FunctionOracle, minimize_convex
from cutplane.estimators import ComplicatedEstimator, SimpleEstimator, decomposition_terms
from cutplane.instances import saddle_instance
from cutplane.layered import LayeredMaintainer, LayerParams
from cutplane.linalg import leverage_scores_exact, projection_matrix
from cutplane.markets import (
    ExchangeMarket,
    FisherMarket,
    MarketAssumptionError,
    Segment,
    solve_arrow_debreu,
    solve_fisher,
    verify_equilibrium_ad,
    verify_equilibrium_fisher,
)
from cutplane.oracles import BallOracle, HalfspaceOracle
from cutplane.quadrature import gauss_rule, integrate_1d, integrate_tensor
from cutplane.saddle import solve_saddle
from cutplane.sketch import make_sketch, sketched_inner
from cutplane.vaidya import FoundPoint, VaidyaParams, run_feasibility
from helpers import light_instance, random_actions, random_instance, ref_leverage, small_log_step

# Frozen calibration constants, measured once and never re-fitted here.
#   C_MSE: complicated estimator MSE / ((N^3 / r) * |dlog w|^2) over seeds
#     10000-10199, disjoint from the 500 checked below; it came out at 3.69e-11.
#   C_ITER: max over the n = 4 runs (seeds 4000-4005) of calls / (n log(nR/eps))
#     was 14.2; times 1.25 and rounded. n = 8 and 16 are then held to it.
C_MSE = 3.69e-11
C_ITER = 18.0


@pytest.fixture
def verdict(capsys):
    def emit(num, title, ok, detail, elapsed=None, limit=None):
        if elapsed is not None:
            ok = ok and elapsed < limit
            detail = f"{detail}; {elapsed:.1f}s (limit {limit:g}s)"
        with capsys.disabled():
            print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return emit


def test_c01_leverage_exactness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_sum = worst_lo = worst_hi = worst_idem = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 33))
        m = int(rng.integers(n, 65))
        A, w = random_instance(rng, m, n, spread=1.0)
        sig = leverage_scores_exact(A, w)
        P = projection_matrix(A, w)
        worst_sum = max(worst_sum, abs(sig.sum() - n))
        worst_lo = max(worst_lo, -sig.min())
        worst_hi = max(worst_hi, sig.max() - 1.0)
        worst_idem = max(worst_idem, np.abs(P @ P - P).max())
    ok = worst_sum <= 1e-8 and worst_lo <= 0.0 and worst_hi <= 1e-10 and worst_idem <= 1e-9
    verdict(1, "leverage exactness (200 instances)", ok,
            f"|sum-n| {worst_sum:.1e} <= 1e-8, min sigma >= {-worst_lo:.1e}, "
            f"max sigma-1 {worst_hi:.1e} <= 1e-10, |P^2-P| {worst_idem:.1e} <= 1e-9",
            time.perf_counter() - t0, 10)


def test_c02_decomposition_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    x01, om = np.polynomial.legendre.leggauss(12)
    x01, om = (x01 + 1) / 2, om / 2
    rule = gauss_rule(12)
    worst_single = worst_five = 0.0
    for _ in range(20):
        A, w = random_instance(rng, 8, 3)
        wn = w * np.exp(0.3 * rng.standard_normal(8))
        exact = ref_leverage(A, wn) - ref_leverage(A, w)
        # Integral of d/dt sigma(w + t d) along the segment.
        d = wn - w
        total = np.zeros(8)
        for t, o in zip(x01, om):
            x = w + t * d
            Q = A @ np.linalg.inv(A.T @ (x[:, None] * A)) @ A.T
            total += o * (d * np.diag(Q) - x * ((Q * Q) @ d))
        worst_single = max(worst_single, np.linalg.norm(total - exact))
        # Five-term split around a perturbed midpoint, unsketched.
        v_mid = w * np.exp(0.05 * rng.uniform(-1, 1, 8))
        nodes = []
        for s in rule.nodes:
            z = (w + s * d) * np.exp(0.05 * rng.uniform(-1, 1, 8))
            Minv = np.linalg.inv(A.T @ (z[:, None] * A))
            nodes.append((z, Minv, A @ Minv @ A.T))
        terms = decomposition_terms(A, w, wn, v_mid, np.linalg.inv(A.T @ (v_mid[:, None] * A)), nodes, rule)
        worst_five = max(worst_five, np.linalg.norm(terms.total() - exact))
    ok = worst_single <= 1e-6 and worst_five <= 1e-6
    verdict(2, "decomposition identities (8x3, N=12)", ok,
            f"integral form {worst_single:.1e} <= 1e-6, five-term form {worst_five:.1e} <= 1e-6",
            time.perf_counter() - t0, 30)


def test_c03_batched_update(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    eta, worst_c, worst_inf, worst_two, fails = 1e-3, 0.0, 0.0, 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        T = int(rng.integers(1, 9))
        A, w = light_instance(rng, 3 * n + 6, n)
        acts, A_T, w_T = random_actions(rng, A, w, T)
        res = batched_update(A, w, acts, 1e-8, eta=eta)
        before = np.where(res.origin >= 0, ref_leverage(A, w)[np.maximum(res.origin, 0)], 0.0)
        err = np.linalg.norm(res.c - (ref_leverage(res.A_final, res.v) - before))
        gap = np.log(res.v) - np.log(w_T)
        g_inf, g_two = np.max(np.abs(gap), initial=0.0), np.linalg.norm(gap)
        worst_c = max(worst_c, err)
        worst_inf = max(worst_inf, g_inf / (T * eta))
        worst_two = max(worst_two, g_two / (0.01 * T))
        fails += not (err <= 1e-8 and g_inf <= T * eta + 1e-12 and g_two <= 0.01 * T + 1e-12)
    verdict(3, "batched low-rank update (100 sequences, T<=8)", fails == 0,
            f"|c-dsigma| {worst_c:.1e} <= 1e-8, log-v bounds used {worst_inf:.2f} (inf) and "
            f"{worst_two:.2f} (l2) of their budget, {fails} failing sequences",
            time.perf_counter() - t0, 60)


def test_c04_simple_drift(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    eps = 1e-3
    A, w = random_instance(rng, 32, 16)
    est = SimpleEstimator(A, w, eps)
    prev, worst_step, worst_err = np.zeros(32), 0.0, 0.0
    for _ in range(50):
        w = small_log_step(rng, w)
        est.update([WeightUpdate(w)])
        err = est.query() - ref_leverage(A, w)
        worst_step = max(worst_step, np.linalg.norm(err - prev))
        worst_err = max(worst_err, np.linalg.norm(err))
        prev = err
    verdict(4, "simple estimator drift (n=16, 50 steps)", worst_step <= 5 * eps,
            f"per-step drift {worst_step:.1e} <= {5 * eps:.0e} (accumulated error max {worst_err:.1e})",
            time.perf_counter() - t0, 30)


@pytest.mark.slow
def test_c05_complicated_statistics(verdict):
    t0 = time.perf_counter()
    N, r = 4, 8
    rng = np.random.default_rng(5)
    A, w = random_instance(rng, 32, 16)
    w2 = small_log_step(rng, w)
    exact = ref_leverage(A, w2) - ref_leverage(A, w)
    samples = np.array(
        [ComplicatedEstimator(A, w, 1e-2, r=r, N=N, seed=s).update([WeightUpdate(w2)]) for s in range(500)]
    )
    quad = ComplicatedEstimator(A, w, 1e-2, r=None, N=N).update([WeightUpdate(w2)])
    budget = np.abs(quad - exact)
    stderr = samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    bias = np.abs(samples.mean(axis=0) - exact)
    bias_ok = bool(np.all(bias <= 4 * stderr + budget))
    mse = float(np.mean(np.sum((samples - exact) ** 2, axis=1)))
    bound = C_MSE * N**3 / r * float(np.sum(np.log(w2 / w) ** 2))
    verdict(5, "complicated estimator statistics (500 seeds)", bias_ok and mse <= 1.5 * bound,
            f"max bias/(4 stderr + quad) {np.max(bias / (4 * stderr + budget)):.2f} <= 1, "
            f"MSE {mse:.2e} <= 1.5 x {bound:.2e} (ratio {mse / bound:.2f})",
            time.perf_counter() - t0, 300)


def test_c06_layered(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    A, w = light_instance(rng, 64, 32, light=12)
    mt = LayeredMaintainer(A, w, LayerParams.desk(32, seed=6))
    worst = 0.0
    for _ in range(100):
        acts, A, w = random_actions(rng, A, w, 1)
        mt.update(acts[0])
        worst = max(worst, np.linalg.norm(mt.query() - ref_leverage(A, w)))
    # A short-period profile forces restarts inside a 40-step stream.
    A2, w2 = random_instance(rng, 24, 6)
    mt2 = LayeredMaintainer(A2, w2, LayerParams.desk(6, T_inn=2, T_mid=2, T_out=2, seed=7))
    restart_err, restarts = 0.0, 0
    for _ in range(40):
        w2 = small_log_step(rng, w2)
        mt2.update(WeightUpdate(w2))
        if mt2.restarts > restarts:
            restarts = mt2.restarts
            restart_err = max(restart_err, np.abs(mt2.query() - ref_leverage(A2, w2)).max())
    ok = worst <= 0.1 and restarts == 5 and restart_err <= 1e-10
    verdict(6, "layered maintainer (n=32, K=100 mixed)", ok,
            f"max drift {worst:.1e} <= 0.1; {restarts} restarts, error after restart {restart_err:.1e}",
            time.perf_counter() - t0, 120)


def _ball_calls(n, seed, params, eps=1e-3):
    rng = np.random.default_rng(1000 * n + seed)
    ball = BallOracle(rng.uniform(-0.9, 0.9, n), eps)
    out = run_feasibility(ball, 1.0, eps, params)
    return out.oracle_calls if isinstance(out, FoundPoint) and ball.contains(out.x) else None


def test_c07_feasibility(verdict):
    t0 = time.perf_counter()
    eps, params = 1e-3, VaidyaParams.desk(C_iter=C_ITER, exact_leverage=True)
    norm, found = {}, True
    for n in (4, 8, 16):
        calls = [_ball_calls(n, s, params) for s in range(6)]
        found &= None not in calls
        norm[n] = max(c or math.inf for c in calls) / (n * math.log(n / eps))
    spread = max(norm.values()) / min(norm.values())
    ok = found and all(v <= C_ITER for v in norm.values()) and spread <= 2
    shown = ", ".join(f"n={n}: {v:.1f}" for n, v in norm.items())
    verdict(7, "cutting-plane feasibility (n=4,8,16)", ok,
            f"max calls/(n log(nR/eps)) {shown} <= C_iter={C_ITER:g}; spread {spread:.2f} <= 2",
            time.perf_counter() - t0, 120)


@pytest.mark.slow
def test_c07b_perturbation_tolerance(verdict):
    t0 = time.perf_counter()
    exact = [_ball_calls(4, s, VaidyaParams.desk(C_iter=C_ITER, exact_leverage=True)) for s in range(4)]
    kept = [_ball_calls(4, s, VaidyaParams.desk(C_iter=C_ITER)) for s in range(4)]
    ok = None not in exact + kept
    change = abs(max(kept) - max(exact)) / max(exact) if ok else math.inf
    verdict("7b", "maintained vs exact leverage call counts (n=4)", ok and change <= 0.2,
            f"max calls {max(kept)} maintained vs {max(exact)} exact, change {change:.0%} <= 20%",
            time.perf_counter() - t0, 120)


def _box(n):
    return HalfspaceOracle(np.vstack([np.eye(n), -np.eye(n)]), np.ones(2 * n))


def test_c08_convex(verdict):
    t0 = time.perf_counter()
    alpha, params = 0.01, VaidyaParams.desk(C_iter=35.0, exact_leverage=True)
    c = np.array([0.6, -0.3, 0.1, 0.8, -0.7, 0.2])
    lin = np.array([1.0, -2.0, 0.5, 3.0, -1.0, 0.25])
    cases = {
        "quadratic": (lambda x: float(np.sum((x - c) ** 2)), lambda x: 2 * (x - c),
                      0.0, float(np.sum(np.maximum((1 - c) ** 2, (1 + c) ** 2)))),
        "linear": (lambda x: float(lin @ x), lambda x: lin.copy(), -np.abs(lin).sum(), np.abs(lin).sum()),
        "max": (lambda x: float(np.max(x)), lambda x: np.eye(6)[int(np.argmax(x))], -1.0, 1.0),
    }
    rel = {}
    for name, (f, g, lo, hi) in cases.items():
        res = minimize_convex(FunctionOracle(f, g), _box(6), 1.0, alpha, params)
        rel[name] = (res.value - lo) / (hi - lo) if np.all(np.abs(res.x) <= 1) else math.inf
    verdict(8, "convex minimization (n=6, alpha=0.01)", all(v <= alpha for v in rel.values()),
            ", ".join(f"{k} {v:.1e}" for k, v in rel.items()) + f" <= {alpha}",
            time.perf_counter() - t0, 60)


GAMES = {
    "bilinear 2x2": {"type": "bilinear", "C": [[1, 0.5], [-0.5, 1]], "d": [0.2, -0.1], "e": [0.3, 0.1]},
    "bilinear 3x3": {"type": "bilinear", "C": [[0.4, -1.2, 0.7], [1.1, 0.3, -0.5], [-0.6, 0.9, 0.2]],
                     "d": [0.1, 0.2, -0.3], "e": [-0.2, 0.1, 0.25]},
    "separable 2+3": {"type": "separable", "a": [0.3, -0.2], "b": [0.1, 0.5, -0.4]},
}


def _measured_gap(doc, x, y):
    """Inner optimization by vertex enumeration (bilinear) or in closed form."""
    if doc["type"] == "separable":
        a, b = np.array(doc["a"]), np.array(doc["b"])
        return float((x - a) @ (x - a) + (y - b) @ (y - b))
    C, d, e = (np.array(doc[k], dtype=float) for k in ("C", "d", "e"))
    f = lambda u, v: float(u @ C @ v + d @ u + e @ v)  # noqa: E731
    Vx = np.array(list(itertools.product([-1.0, 1.0], repeat=C.shape[0])))
    Vy = np.array(list(itertools.product([-1.0, 1.0], repeat=C.shape[1])))
    return max(f(x, v) for v in Vy) - min(f(u, y) for u in Vx)


def test_c09_saddle(verdict):
    t0 = time.perf_counter()
    ok, parts = True, []
    for name, doc in GAMES.items():
        inst = saddle_instance({"schema_version": "1", "kind": "saddle", "eps": 0.05, "game": doc})
        p = inst.problem
        res = solve_saddle(p, inst.eps, seed=9)
        gap = _measured_gap(doc, res.x, res.y)
        target = inst.eps * p.L * p.r
        # Both sides can land at rounding level, hence the 1e-12 floor.
        ok &= gap <= target and res.certificate >= gap - 1e-12 and res.feasible_mass > 0.5
        parts.append(f"{name}: gap {gap:.1e} <= {target:.2f}, cert {res.certificate:.1e}, mass {res.feasible_mass:.2f}")
    verdict(9, "saddle points (eps=0.05, cert >= gap - 1e-12)", ok, "; ".join(parts), time.perf_counter() - t0, 120)


def _random_exchange(rng):
    while True:
        n = int(rng.integers(2, 5))
        u = rng.integers(0, 6, (n, n)) * (rng.random((n, n)) < 0.7)
        m = ExchangeMarket(u)
        try:
            m.validate()
            return m
        except MarketAssumptionError:
            pass


def _random_fisher(rng):
    while True:
        nb, ng = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        k = int(rng.integers(max(nb, ng), 7))
        segs = [Segment(int(i % nb), int(i % ng), float(rng.integers(1, 6)), float(rng.uniform(0.3, 1.5)))
                for i in range(k)]
        m = FisherMarket(rng.uniform(0.5, 2.0, nb), ng, segs)
        try:
            m.validate()
            return m
        except MarketAssumptionError:
            pass


def test_c10_markets(verdict):
    t0 = time.perf_counter()
    analytic = []
    for u in ([[0, 1], [1, 0]], [[0, 1, 0], [0, 0, 1], [1, 0, 0]]):
        m = ExchangeMarket(u)
        rep = solve_arrow_debreu(m, 1e-3)
        analytic.append(max(verify_equilibrium_ad(m, rep.prices, rep.allocation)))
    for m in (FisherMarket([1.5], 1, [Segment(0, 0, 2.0, 3.0)]),
              FisherMarket([2.0], 2, [Segment(0, 0, 1.0, 5.0), Segment(0, 1, 1.0, 5.0)]),
              FisherMarket([1.0, 0.5], 1, [Segment(0, 0, 1.0, 2.0), Segment(1, 0, 3.0, 2.0)])):
        rep = solve_fisher(m, 1e-3)
        analytic.append(max(verify_equilibrium_fisher(m, rep.prices, rep.allocation)))
    rng = np.random.default_rng(1010)
    rand = []
    for s in range(5):
        m = _random_exchange(rng)
        rep = solve_arrow_debreu(m, 1e-2, seed=s)
        rand.append(max(verify_equilibrium_ad(m, rep.prices, rep.allocation)))
        f = _random_fisher(rng)
        rep = solve_fisher(f, 1e-2, seed=s)
        rand.append(max(verify_equilibrium_fisher(f, rep.prices, rep.allocation)))
    ok = max(analytic) <= 1e-3 and max(rand) <= 1e-2
    verdict(10, "market equilibria", ok,
            f"analytic worst residual {max(analytic):.1e} <= 1e-3, random worst {max(rand):.1e} <= 1e-2",
            time.perf_counter() - t0, 180)


def test_c11_quadrature(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for N in range(1, 11):
        rule = gauss_rule(N)
        for k in range(2 * N):
            worst = max(worst, abs(integrate_1d(lambda t, k=k: t**k, rule) - 1.0 / (k + 1)))
    tensor = integrate_tensor(lambda s, s2, t: math.exp(s + s2 + t), 3, gauss_rule(5))
    terr = abs(tensor - (math.e - 1) ** 3)
    verdict(11, "Gauss-Legendre quadrature", worst <= 1e-11 and terr <= 1e-10,
            f"monomials up to degree 2N-1 (N<=10) {worst:.1e} <= 1e-11, tensor exp {terr:.1e} <= 1e-10",
            time.perf_counter() - t0, 5)


def test_c12_sketch(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1212)
    r, m, S = 8, 20, 4000
    ok, parts = True, []
    x = rng.standard_normal(m)
    y = rng.standard_normal(m)
    for label, (u, v) in {"general": (x, y), "equal": (x, x)}.items():
        vals = np.array([sketched_inner(make_sketch(r, m, 50_000 + s), u, v) for s in range(S)])
        z = abs(vals.mean() - u @ v) / (vals.std(ddof=1) / math.sqrt(S))
        ratio = vals.var(ddof=1) / (3 / r * (u @ u) * (v @ v))
        ok &= z <= 4 and ratio <= 1.3
        parts.append(f"{label}: bias {z:.1f} stderr <= 4, var/(3|x|^2|y|^2/r) {ratio:.2f} <= 1.3")
    verdict(12, "JL sketch unbiasedness and variance", ok, "; ".join(parts), time.perf_counter() - t0, 30)


def test_c13_reproducibility(verdict, tmp_path):
    insts = {
        "feasibility": {"schema_version": "1", "kind": "feasibility", "R": 1, "eps": 0.001,
                        "oracle": {"type": "ball", "center": [0.3, -0.2, 0.1], "radius": 0.01}},
        "saddle": {"schema_version": "1", "kind": "saddle", "eps": 0.05, "game": GAMES["bilinear 2x2"]},
        "market-fisher": {"schema_version": "1", "kind": "market_fisher", "budgets": [1, 0.5], "n_goods": 1,
                          "segments": [{"buyer": 0, "good": 0, "rate": 1, "cap": 2},
                                       {"buyer": 1, "good": 0, "rate": 3, "cap": 2}]},
        "bench-leverage": {"K": 15},
    }
    compared, diffs = 0, []
    for cmd, doc in insts.items():
        path = tmp_path / f"{cmd}.json"
        path.write_text(json.dumps(doc))
        for out in ("a", "b"):
            code = cli_main([cmd, "--instance", str(path), "--seed", "1234", "--out", str(tmp_path / cmd / out), "--no-timing"])
            assert code == 0, f"{cmd} exited with {code}"
        for f in sorted((tmp_path / cmd / "a").iterdir()):
            compared += 1
            if f.read_bytes() != (tmp_path / cmd / "b" / f.name).read_bytes():
                diffs.append(f"{cmd}/{f.name}")
    # The sketched estimator in-process, compared bit for bit.
    rng = np.random.default_rng(13)
    A, w = random_instance(rng, 24, 8)
    w2 = small_log_step(rng, w)
    runs = [ComplicatedEstimator(A, w, 1e-2, r=8, N=4, seed=77).update([WeightUpdate(w2)]).tobytes() for _ in range(2)]
    compared += 1
    if runs[0] != runs[1]:
        diffs.append("complicated estimator")
    verdict(13, "bit-identical reruns under a fixed seed", not diffs,
            f"{compared} artifacts compared, differing: {diffs or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
