import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutplane.quadrature import QuadratureEvaluationError, gauss_rule, integrate_1d, integrate_tensor


def jacobi_oracle(N):
    """Nodes and weights from a dense eigensolve of the Legendre Jacobi matrix."""
    k = np.arange(1, N)
    J = np.diag(k / np.sqrt(4.0 * k * k - 1.0), 1)
    J = J + J.T
    x, V = np.linalg.eig(J) if N > 1 else (np.zeros(1), np.ones((1, 1)))
    x = np.real(x)
    w = np.real(V[0]) ** 2
    order = np.argsort(x)
    return (x[order] + 1) / 2, w[order] / w.sum()


def test_single_node():
    rule = gauss_rule(1)
    assert rule.nodes == (0.5,) and rule.weights == (1.0,)


def test_two_nodes():
    rule = gauss_rule(2)
    np.testing.assert_allclose(rule.nodes, [(1 - 1 / math.sqrt(3)) / 2, (1 + 1 / math.sqrt(3)) / 2], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("N", [3, 5, 8, 13])
def test_matches_dense_eigen_oracle(N):
    nodes, weights = jacobi_oracle(N)
    rule = gauss_rule(N)
    np.testing.assert_allclose(rule.nodes, nodes, atol=1e-13)
    np.testing.assert_allclose(rule.weights, weights, atol=1e-13)


@pytest.mark.parametrize("N", [1, 2, 4, 7, 20, 60])
def test_weights_normalized_and_nodes_interior(N):
    rule = gauss_rule(N)
    assert abs(sum(rule.weights) - 1.0) <= 1e-13
    assert all(0 < s < 1 for s in rule.nodes)
    assert list(rule.nodes) == sorted(rule.nodes)
    assert all(w >= 0 for w in rule.weights)


def test_bad_size():
    with pytest.raises(ValueError):
        gauss_rule(0)


def test_degree_one():
    assert integrate_1d(lambda t: t, gauss_rule(1)) == 0.5


def test_cubic():
    assert abs(integrate_1d(lambda t: t**3, gauss_rule(2)) - 0.25) <= 1e-14


def test_exponential():
    assert abs(integrate_1d(math.exp, gauss_rule(5)) - (math.e - 1)) <= 1e-12


def test_non_finite_integrand():
    with pytest.raises(QuadratureEvaluationError):
        integrate_1d(lambda t: float("nan"), gauss_rule(3))


def test_tensor_constant():
    for d in (1, 2, 3):
        assert integrate_tensor(lambda *a: 1.0, d, gauss_rule(4)) == pytest.approx(1.0, abs=1e-15)


def test_tensor_product_of_coordinates():
    assert integrate_tensor(lambda s, t: s * t, 2, gauss_rule(1)) == 0.25


def test_tensor_exponential():
    val = integrate_tensor(lambda s, s2, t: math.exp(s + s2 + t), 3, gauss_rule(5))
    assert abs(val - (math.e - 1) ** 3) <= 1e-10


def test_tensor_bad_dimension():
    with pytest.raises(ValueError):
        integrate_tensor(lambda: 1.0, 0, gauss_rule(2))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.data())
def test_polynomial_exactness(N, data):
    deg = data.draw(st.integers(0, 2 * N - 1))
    coeffs = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=deg + 1, max_size=deg + 1)))
    exact = float(sum(c / (k + 1) for k, c in enumerate(coeffs)))
    got = integrate_1d(lambda t: float(np.polynomial.polynomial.polyval(t, coeffs)), gauss_rule(N))
    assert abs(got - exact) <= 1e-11 * (1 + np.abs(coeffs).sum())


def test_error_decays_until_roundoff():
    errs = [abs(integrate_1d(math.exp, gauss_rule(N)) - (math.e - 1)) for N in range(1, 12)]
    for a, b in zip(errs, errs[1:]):
        if a < 1e-14:
            break
        assert b < a


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_smooth_error_bound(N):
    # |error| <= max|f^(2N)| (N!)^4 / ((2N+1) ((2N)!)^3) on [0, 1]; for exp the max is e.
    bound = math.e * math.factorial(N) ** 4 / ((2 * N + 1) * math.factorial(2 * N) ** 3)
    assert abs(integrate_1d(math.exp, gauss_rule(N)) - (math.e - 1)) <= bound
