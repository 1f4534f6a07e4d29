"""Independent reference implementations used as oracles by the tests.

Nothing here imports the package; every routine is written from the
definitions with plain loops or textbook dense algebra.
"""

from __future__ import annotations

import numpy as np


def naive_matmul(A, B):
    """Triple-loop product, the reference for every dense kernel."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, k = A.shape
    k2, m = B.shape
    assert k == k2
    C = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += A[i, t] * B[t, j]
            C[i, j] = s
    return C


def ref_gram(A, w):
    return naive_matmul(np.asarray(A).T, np.asarray(w)[:, None] * np.asarray(A))


def ref_leverage(A, w):
    """sigma_i = w_i a_i^T (A^T W A)^{-1} a_i through a dense inverse."""
    A = np.asarray(A, dtype=float)
    Minv = np.linalg.inv(ref_gram(A, w))
    return np.array([w[i] * A[i] @ Minv @ A[i] for i in range(A.shape[0])])


def random_instance(rng, m, n, spread=0.5):
    A = rng.standard_normal((m, n))
    w = np.exp(spread * rng.standard_normal(m))
    return A, w


def small_log_step(rng, w, size=0.009):
    d = rng.standard_normal(w.size)
    return w * np.exp(size * d / np.linalg.norm(d))


def light_instance(rng, m, n, light=4):
    """Random instance whose last ``light`` rows carry negligible leverage."""
    A, w = random_instance(rng, m, n)
    w[m - light :] = 1e-4
    return A, w


def random_actions(rng, A, w, T, kinds=("update", "insert", "delete"), step=0.009, lev=0.005):
    """``T`` actions that respect the small-update caps, built greedily.

    Returns the actions and the final ``(A, w)``. Imports are local so that
    this module stays free of package imports at load time.
    """
    from cutplane.actions import Delete, Insert, WeightUpdate

    A = np.array(A, dtype=float)
    w = np.array(w, dtype=float)
    acts = []
    for _ in range(T):
        kind = kinds[rng.integers(len(kinds))]
        Minv = np.linalg.inv(ref_gram_fast(A, w))
        if kind == "delete" and A.shape[0] > A.shape[1] + 1:
            levs = w * np.einsum("ij,jk,ik->i", A, Minv, A)
            i = int(np.argmin(levs))
            if levs[i] <= 0.009:
                acts.append(Delete(i))
                A = np.delete(A, i, axis=0)
                w = np.delete(w, i)
                continue
            kind = "update"
        if kind == "insert":
            a = rng.standard_normal(A.shape[1])
            wa = lev / float(a @ Minv @ a)
            acts.append(Insert(a, wa))
            A = np.vstack([A, a])
            w = np.append(w, wa)
            continue
        w = small_log_step(rng, w, step)
        acts.append(WeightUpdate(w.copy()))
    return acts, A, w


def ref_gram_fast(A, w):
    return A.T @ (w[:, None] * A)
