import numpy as np
import pytest
from hypothesis import given, strategies as st

from dense import dense_H
from scenario_fbe.errors import DimensionMismatch, UnsupportedSpec, ZeroProbability
from scenario_fbe.generators import gen_random_instance
from scenario_fbe.problem import (ProblemInstance, apply_H, apply_H_adjoint, eval_f, precondition)
from scenario_fbe.prox import Box, CustomBlock, ScaledL1
from scenario_fbe.tree import ScenarioTree, build_from_markov


@given(st.integers(0, 10_000))
def test_adjoint_identity(seed):
    prob = gen_random_instance(seed, tree_shape=(2, 2))
    rng = np.random.default_rng(seed)
    pt = prob.zero_primal()
    pt.x[:] = rng.standard_normal(pt.x.shape)
    pt.u[:] = rng.standard_normal(pt.u.shape)
    y = rng.standard_normal(prob.dual_dim)
    lhs = apply_H(prob, pt) @ y
    rhs = apply_H_adjoint(prob, y).full_vector() @ pt.full_vector()
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_apply_H_matches_dense_matrix():
    prob = gen_random_instance(1, tree_shape=(3, 1, 2))
    pt = prob.zero_primal()
    pt.x[:] = np.arange(pt.x.size).reshape(pt.x.shape)
    pt.u[:] = 1.5
    np.testing.assert_allclose(apply_H(prob, pt), dense_H(prob) @ pt.full_vector())


def test_eval_f_infinite_when_dynamics_violated():
    prob = gen_random_instance(2)
    pt = prob.zero_primal()
    assert eval_f(prob, pt) == np.inf or np.allclose(prob.root_state, 0)
    pt.x[0] = prob.root_state
    for j in range(1, prob.tree.num_nodes):
        a = prob.tree.ancestor[j]
        pt.x[j] = prob.A[j] @ pt.x[a] + prob.B[j] @ pt.u[a] + prob.c[j]
    assert np.isfinite(eval_f(prob, pt))


def test_vector_round_trip():
    prob = gen_random_instance(3)
    pt = prob.zero_primal()
    pt.x[:] = np.random.default_rng(0).standard_normal(pt.x.shape)
    pt.x[0] = prob.root_state
    pt.u[:] = 2.0
    back = prob.primal_from_vector(pt.to_vector())
    np.testing.assert_array_equal(back.x, pt.x)
    np.testing.assert_array_equal(back.u, pt.u)


def test_broadcast_and_shape_errors():
    t = build_from_markov(2, [[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5], 2)
    kw = dict(tree=t, A=np.eye(2), B=np.ones((2, 1)), c=np.zeros(2), Q=np.eye(2), R=np.eye(1),
              S=np.zeros((1, 2)), q=np.zeros(2), r=np.zeros(1), P_terminal=np.eye(2),
              p_terminal=np.zeros(2), F=np.zeros((1, 2)), G=np.ones((1, 1)),
              F_terminal=np.eye(2), stage_specs=Box([-1], [1]), terminal_specs=Box([-1, -1], [1, 1]),
              root_state=np.zeros(2))
    prob = ProblemInstance(**kw)
    assert prob.A.shape == (7, 2, 2) and prob.validate() == []
    with pytest.raises(DimensionMismatch):
        ProblemInstance(**{**kw, "R": np.eye(2)})
    bad = ProblemInstance(**{**kw, "R": -np.eye(1)})
    assert any("R not positive definite" in v for v in bad.validate())
    bad = ProblemInstance(**{**kw, "stage_specs": Box([1], [-1])})
    assert any("lower bound exceeds" in v for v in bad.validate())


def test_precondition_identity_for_unit_probabilities():
    t = build_from_markov(1, [[1.0]], [1.0], 3)
    prob = gen_random_instance(0, tree_shape=t)
    pre = precondition(prob)
    np.testing.assert_array_equal(pre.F, prob.F)
    np.testing.assert_array_equal(pre.nonsmooth.lower, prob.nonsmooth.lower)
    np.testing.assert_array_equal(pre.dual_scale, 1.0)


def test_precondition_is_exact_reformulation():
    """g(Hx) is unchanged: scaled rows against scaled bounds and rescaled l1 weights."""
    prob = gen_random_instance(4, tree_shape=(2, 3), kinds=("box", "l1"))
    pre = precondition(prob)
    rng = np.random.default_rng(1)
    for _ in range(5):
        pt = prob.zero_primal()
        pt.x[:] = 0.1 * rng.standard_normal(pt.x.shape)
        pt.u[:] = 0.1 * rng.standard_normal(pt.u.shape)
        z, zb = apply_H(prob, pt), apply_H(pre, pt)
        np.testing.assert_allclose(zb, pre.dual_scale * z)
        assert prob.nonsmooth.value(z) == pytest.approx(pre.nonsmooth.value(zb))


def test_precondition_rejects_zero_probability_and_custom_blocks():
    prob = gen_random_instance(0)
    with pytest.raises(ZeroProbability):
        p = prob.tree.probability.copy()
        p[-1] = 0.0
        precondition(ProblemInstance(**{**{f: getattr(prob, f) for f in (
            "A", "B", "c", "Q", "R", "S", "q", "r", "P_terminal", "p_terminal", "F", "G",
            "F_terminal", "stage_specs", "terminal_specs", "root_state")},
            "tree": ScenarioTree(prob.tree.ancestor, p)}))
    with pytest.raises(UnsupportedSpec):
        precondition(ProblemInstance(**{**{f: getattr(prob, f) for f in (
            "tree", "A", "B", "c", "Q", "R", "S", "q", "r", "P_terminal", "p_terminal", "F", "G",
            "F_terminal", "terminal_specs", "root_state")}, "stage_specs": CustomBlock()}))
