import numpy as np
import pytest
from hypothesis import given, strategies as st

from dense import kkt_solve, zoh_series
from scenario_fbe.errors import InvalidParams
from scenario_fbe.generators import (SpringMassParams, gen_random_instance, gen_spring_mass,
                                     sample_spring_mass_states, spring_mass_continuous, zoh)
from scenario_fbe.io import dumps


def test_spring_mass_dimensions_and_tree():
    prob = gen_spring_mass(5, SpringMassParams(horizon=3))
    assert (prob.n_x, prob.n_u) == (10, 4)
    assert prob.tree.num_nodes == 15 and prob.tree.num_leaves == 8
    assert prob.validate() == []
    np.testing.assert_allclose(prob.Q[1], 5 * np.eye(10))
    np.testing.assert_allclose(prob.R[1], 2 * np.eye(4))
    np.testing.assert_allclose(prob.P_terminal[0], 100 * np.eye(10))
    # mode-1 nodes carry no disturbance, mode-2 nodes carry 0.1
    modes = prob.tree.mode[1:]
    np.testing.assert_array_equal(prob.c[1:][modes == 0], 0.0)
    np.testing.assert_array_equal(prob.c[1:][modes == 1], 0.1)


def test_zoh_matches_series_oracle():
    Ac, Bc = spring_mass_continuous(5, SpringMassParams())
    A, B = zoh(Ac, Bc, 0.5)
    Ar, Br = zoh_series(Ac, Bc, 0.5)
    np.testing.assert_allclose(A, Ar, atol=1e-10)
    np.testing.assert_allclose(B, Br, atol=1e-10)


def test_free_particles():
    p = SpringMassParams(stiffness=0.0, damping=0.0)
    prob = gen_spring_mass(3, p)
    A = prob.A[1]
    np.testing.assert_allclose(A[3:, 3:], np.eye(3), atol=1e-14)
    np.testing.assert_allclose(A[:3, 3:], 0.5 * np.eye(3), atol=1e-14)


def test_invalid_params():
    with pytest.raises(InvalidParams):
        gen_spring_mass(1)
    with pytest.raises(InvalidParams):
        gen_spring_mass(3, SpringMassParams(mass=-1.0))
    with pytest.raises(InvalidParams):
        gen_random_instance(0, kinds=("ball",))


def test_state_sampling_inside_shrunk_box():
    x = sample_spring_mass_states(5, 200, 0)
    assert x.shape == (200, 10)
    assert np.all(np.abs(x[:, 5:]) <= 2.5) and np.all(np.abs(x[:, :5]) <= 2.5)
    np.testing.assert_array_equal(x, sample_spring_mass_states(5, 200, 0))


def test_random_instance_reproducible():
    assert dumps(gen_random_instance(5, tree_shape=(2, 3))) == dumps(gen_random_instance(5, tree_shape=(2, 3)))


@given(st.integers(0, 10_000))
def test_random_instances_valid_and_solvable(seed):
    prob = gen_random_instance(seed, tree_shape=(2, 2), kinds=("box", "l1", "none"))
    assert prob.validate() == []
    lo, hi = prob.nonsmooth.lower, prob.nonsmooth.upper
    assert np.all(lo <= 0) and np.all(hi >= 0)
    x, u, _ = kkt_solve(prob, np.zeros(prob.dual_dim))
    assert np.all(np.isfinite(x)) and np.all(np.isfinite(u))
