import numpy as np
import pytest
from hypothesis import given, strategies as st

from dense import dense_bfgs_inverse
from scenario_fbe.errors import DimensionMismatch
from scenario_fbe.lbfgs import LbfgsBuffer


def test_empty_buffer_returns_negative_gradient():
    g = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(LbfgsBuffer().apply_direction(g), -g)


def test_single_identity_pair():
    buf = LbfgsBuffer()
    s = np.array([1.0, 2.0, 0.5])
    assert buf.push(s, s, 1.0)
    g = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(buf.apply_direction(g), -g)


def test_push_rules():
    buf = LbfgsBuffer(eps_curv=1e-12)
    s = np.array([1.0, 0.0])
    assert not buf.push(s, -s, 0.0)
    assert not buf.push(s, np.zeros(2), 0.0)
    assert buf.push(s, s, 0.5)
    # borderline: <s, q> == eps ||s||^2 scale_ref is rejected
    buf2 = LbfgsBuffer(eps_curv=0.5)
    assert not buf2.push(np.array([1.0, 0.0]), np.array([0.5, 3.0]), 1.0)
    with pytest.raises(DimensionMismatch):
        buf.push(np.ones(2), np.ones(3))
    with pytest.raises(DimensionMismatch):
        buf.push(np.ones(3), np.ones(3))


def test_clear_and_fifo():
    buf = LbfgsBuffer(memory=2)
    buf.clear()
    pairs = [(np.eye(3)[i], 2 * np.eye(3)[i]) for i in range(3)]
    for s, q in pairs:
        buf.push(s, q)
    assert len(buf) == 2
    assert not any(np.array_equal(s, pairs[0][0]) for s, _, _ in buf.pairs)
    assert buf.gamma0 == pytest.approx(0.5)
    buf.clear()
    assert len(buf) == 0 and buf.gamma0 == 1.0
    g = np.ones(3)
    np.testing.assert_array_equal(buf.apply_direction(g), -g)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_matches_dense_bfgs(seed, npairs):
    rng = np.random.default_rng(seed)
    n = 6
    M = rng.standard_normal((n, n))
    A = M @ M.T + np.eye(n)
    buf = LbfgsBuffer(memory=npairs)
    pairs = []
    for _ in range(npairs):
        s = rng.standard_normal(n)
        q = A @ s
        buf.push(s, q)
        pairs.append((s, q))
    g = rng.standard_normal(n)
    s, q = pairs[-1]
    ref = -dense_bfgs_inverse(pairs, (s @ q) / (q @ q), n) @ g
    np.testing.assert_allclose(buf.apply_direction(g), ref, rtol=1e-8, atol=1e-10)
    assert buf.apply_direction(g) @ g < 0


def test_quasi_newton_on_quadratic_with_exact_line_search():
    """Memory >= n on a quadratic with exact line search.

    Directions equal the dense BFGS directions built from the same pairs, and
    the iterates coincide with classical BFGS started from a fixed scaling
    (exact line search makes the scaling of the initial matrix irrelevant).
    """
    rng = np.random.default_rng(5)
    n = 5
    M = rng.standard_normal((n, n))
    A = M @ M.T + np.eye(n)
    b = rng.standard_normal(n)
    grad = lambda x: A @ x - b
    buf = LbfgsBuffer(memory=n)
    pairs = []
    x = np.zeros(n)
    xc, Hc = np.zeros(n), np.eye(n)
    for _ in range(n):
        g = grad(x)
        d = buf.apply_direction(g)
        gamma = 1.0 if not pairs else (pairs[-1][0] @ pairs[-1][1]) / (pairs[-1][1] @ pairs[-1][1])
        np.testing.assert_allclose(d, -dense_bfgs_inverse(pairs, gamma, n) @ g, rtol=1e-8, atol=1e-12)
        xn = x + (-(g @ d) / (d @ A @ d)) * d
        pairs.append((xn - x, grad(xn) - g))
        buf.push(*pairs[-1])
        x = xn
        gc = grad(xc)
        dc = -Hc @ gc
        xcn = xc + (-(gc @ dc) / (dc @ A @ dc)) * dc
        s, q = xcn - xc, grad(xcn) - gc
        rho = 1 / (s @ q)
        V = np.eye(n) - rho * np.outer(q, s)
        Hc = V.T @ Hc @ V + rho * np.outer(s, s)
        xc = xcn
        np.testing.assert_allclose(x, xc, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(A @ x, b, atol=1e-8)
