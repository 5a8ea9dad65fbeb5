import numpy as np
import pytest

from scenario_fbe.errors import InfiniteConjugate
from scenario_fbe.fbe import LineSearchCert, fb_step, fbe_grad, fbe_value
from scenario_fbe.generators import gen_random_instance
from scenario_fbe.oracles import estimate_lipschitz, fhat_value, hessian_vec
from scenario_fbe.riccati import factor
from scenario_fbe.solvers import SolverConfig, solve_minfbe


def setup(seed, kinds=("box", "l1", "none")):
    prob = gen_random_instance(seed, tree_shape=(2, 2, 2), kinds=kinds)
    cache = factor(prob)
    lam = 0.9 / estimate_lipschitz(cache, prob)
    return prob, cache, prob.nonsmooth, lam


def test_state_identities():
    prob, cache, g, lam = setup(0)
    y = np.random.default_rng(0).standard_normal(prob.dual_dim)
    st = fb_step(cache, prob, g, y, lam)
    np.testing.assert_allclose(st.R, st.z - st.Hx)
    np.testing.assert_allclose(st.T, y - lam * st.R, atol=1e-12 * (1 + np.abs(y).max()))
    np.testing.assert_allclose(st.z, g.prox(y / lam + st.Hx, 1 / lam))


def test_unconstrained_blocks_give_zero_T():
    prob, cache, g, lam = setup(1, kinds=("none",))
    st = fb_step(cache, prob, g, np.ones(prob.dual_dim), lam)
    assert np.all(st.T == 0)
    np.testing.assert_allclose(st.R, np.ones(prob.dual_dim) / lam)


def test_majorization_and_sandwich():
    prob, cache, g, lam = setup(2)
    rng = np.random.default_rng(1)
    rep = solve_minfbe(prob, cache, g, SolverConfig(lam=lam, eps=1e-10, max_iters=500))
    assert rep.converged
    dual_opt = fb_step(cache, prob, g, rep.y, lam).phi
    assert dual_opt == pytest.approx(fhat_value(cache, prob, rep.y) + g.conj(rep.y), rel=1e-6, abs=1e-6)
    for _ in range(10):
        y = rep.y + rng.standard_normal(prob.dual_dim)
        phi = fb_step(cache, prob, g, y, lam).phi
        upper = fhat_value(cache, prob, y) + g.conj(y)
        assert phi <= upper + 1e-9 * max(1, abs(upper))
        assert phi >= dual_opt - 1e-7 * max(1, abs(dual_opt))


def test_gradient_vanishes_at_optimum_and_tends_to_R():
    prob, cache, g, lam = setup(3)
    rep = solve_minfbe(prob, cache, g, SolverConfig(lam=lam, eps=1e-9, max_iters=500))
    st = fb_step(cache, prob, g, rep.y, lam)
    grad, _ = fbe_grad(st, cache, prob)
    assert np.abs(grad).max() <= 1e-7
    y = np.random.default_rng(2).standard_normal(prob.dual_dim)
    small = fb_step(cache, prob, g, y, 1e-9)
    grad, _ = fbe_grad(small, cache, prob)
    assert np.linalg.norm(grad - small.R) <= 1e-6 * np.linalg.norm(small.R)


def test_certificate_trivial_cases():
    prob, cache, g, lam = setup(4)
    y = np.random.default_rng(3).standard_normal(prob.dual_dim)
    st = fb_step(cache, prob, g, y, lam)
    d = np.zeros(prob.dual_dim)
    cert = LineSearchCert(prob, g, st, d, hessian_vec(cache, prob, d))
    assert cert.alpha1 == 0 and cert.alpha2 == 0
    assert cert.alpha0(0.5) == pytest.approx(0.0, abs=1e-12)
    cert = LineSearchCert(prob, g, st, y, hessian_vec(cache, prob, y))
    assert cert.value(0.0) == 0.0


def test_certificate_state_equals_fresh_step():
    prob, cache, g, lam = setup(5)
    rng = np.random.default_rng(4)
    y, d = rng.standard_normal((2, prob.dual_dim))
    st = fb_step(cache, prob, g, y, lam)
    cert = LineSearchCert(prob, g, st, d, hessian_vec(cache, prob, d))
    w = cert.state(0.5)
    ref = fb_step(cache, prob, g, y + 0.5 * d, lam)
    np.testing.assert_allclose(w.T, ref.T, atol=1e-10)
    np.testing.assert_allclose(w.x.u, ref.x.u, atol=1e-10)
    assert w.phi == pytest.approx(ref.phi, rel=1e-10)


def test_infinite_conjugate_raises():
    prob, cache, g, lam = setup(6)
    st = fb_step(cache, prob, g, np.zeros(prob.dual_dim), lam)
    st.gconj = np.inf
    with pytest.raises(InfiniteConjugate):
        fbe_value(st)
