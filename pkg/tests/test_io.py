import json

import numpy as np
import pytest

from scenario_fbe.errors import CacheMismatch, ProblemFileError
from scenario_fbe.generators import SpringMassParams, gen_random_instance, gen_spring_mass
from scenario_fbe.io import (cached_factor, content_hash, dumps, load_factor, load_problem, loads,
                             save_factor, save_problem, to_dict)
from scenario_fbe.problem import ProblemInstance
from scenario_fbe.riccati import factor
from scenario_fbe.solvers import SolverConfig, solve

FIELDS = ("A", "B", "c", "Q", "R", "S", "q", "r", "P_terminal", "p_terminal", "F", "G",
          "F_terminal", "root_state")


def assert_same(a: ProblemInstance, b: ProblemInstance):
    for f in FIELDS:
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert np.array_equal(a.tree.ancestor, b.tree.ancestor)
    assert np.array_equal(a.tree.probability, b.tree.probability)
    assert a.stage_specs == b.stage_specs and a.terminal_specs == b.terminal_specs


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_is_exact(seed):
    prob = gen_random_instance(seed, tree_shape=(2, 3), kinds=("box", "l1", "none"))
    back = loads(dumps(prob))
    assert_same(prob, back)
    assert dumps(back) == dumps(prob)


def test_round_trip_preserves_solution(tmp_path):
    prob = gen_random_instance(11, tree_shape=(2, 2, 2))
    save_problem(prob, tmp_path / "p.json")
    back = load_problem(tmp_path / "p.json")
    cfg = SolverConfig(eps=1e-8)
    a, b = solve(prob, "nama", cfg), solve(back, "nama", cfg)
    np.testing.assert_allclose(a.x.x, b.x.x, atol=1e-10)


def test_broadcast_shorthand_and_infinite_bounds():
    prob = gen_spring_mass(3, SpringMassParams(horizon=2, v_max=np.inf))
    d = to_dict(prob)
    assert "broadcast" in d["data"]["A"] and "per_node" in d["data"]["c"]
    assert d["stage_specs"]["upper"][-1] == "inf"
    assert_same(prob, loads(dumps(prob)))


def test_markov_tree_spec():
    d = to_dict(gen_spring_mass(2, SpringMassParams(horizon=2)))
    d["tree"] = {"markov": {"transition": [[0.1, 0.9], [0.9, 0.1]], "initial_dist": [0.5, 0.5],
                            "horizon": 2}}
    from scenario_fbe.io import from_dict
    prob = from_dict(d)
    assert prob.tree.num_nodes == 7


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("root_state"),
    lambda d: d.update(format="other"),
    lambda d: d.update(version=99),
    lambda d: d["dims"].update(n_x=99),
    lambda d: d["data"].update(A={"per_node": [[1.0]]}),
    lambda d: d["data"].update(A={"diagonal": 1}),
    lambda d: d.update(stage_specs={"type": "ball"}),
])
def test_corrupted_documents_rejected(mutate):
    d = to_dict(gen_random_instance(0))
    mutate(d)
    with pytest.raises(ProblemFileError):
        loads(json.dumps(d))
    with pytest.raises(ProblemFileError):
        loads("{not json")


def test_factor_cache_files(tmp_path):
    prob = gen_random_instance(3, tree_shape=(2, 2))
    c1 = cached_factor(prob, tmp_path)
    assert (tmp_path / f"{content_hash(prob)}.npz").exists()
    c2 = cached_factor(prob, tmp_path)
    for name in ("K", "Phi", "Theta", "D", "Lam", "sigma", "chat"):
        assert np.array_equal(getattr(c1, name), getattr(c2, name))
    assert content_hash(prob) == content_hash(prob.with_root_state(prob.root_state + 1))
    save_factor(factor(prob), prob, tmp_path / "c.npz")
    with pytest.raises(CacheMismatch):
        load_factor(tmp_path / "c.npz", gen_random_instance(4, tree_shape=(2, 2)))
