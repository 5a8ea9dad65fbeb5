"""Stage-parallel oracles for the dual: x(y), Hessian-vector products and f-hat.

Every sweep processes the nodes of one stage as a batch; only the loop over
stages is sequential. The sweeps also accept a batch of dual vectors (leading
axis) and handle all of them in the same pass.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import CacheMismatch
from .problem import PrimalPoint, ProblemInstance, apply_H, stage_cost
from .riccati import FactorCache


def _check(cache: FactorCache, prob: ProblemInstance):
    if not cache.matches(prob):
        raise CacheMismatch("factor cache was built for different problem data")


def _stage_data(cache: FactorCache, prob: ProblemInstance, k: int):
    """Per-stage matrices repeated ``k`` times along the node axis.

    A batch of ``k`` dual vectors is processed as ``k`` stacked copies of the
    tree; the row-wise contractions then give bitwise the same result as ``k``
    separate sweeps.
    """
    if k in cache.batch_data:
        return cache.batch_data[k]
    t = prob.tree
    src = cache.source
    rep = (lambda a: a) if k == 1 else (lambda a: np.concatenate([a] * k))
    stages = []
    for s in range(t.num_stages):
        par, ch = t.nodes_at(s), t.nodes_at(s + 1)
        ps, cs = slice(par.start, par.stop), slice(ch.start, ch.stop)
        nc, npar = len(ch), len(par)
        stages.append({
            "Phi": rep(cache.Phi[cs]), "Theta": rep(cache.Theta[cs]), "D": rep(cache.D[cs]),
            "Lam": rep(cache.Lam[cs]), "A": rep(src["A"][cs]), "B": rep(src["B"][cs]),
            "c": rep(src["c"][cs]), "K": rep(cache.K[ps]), "sigma": rep(cache.sigma[ps]),
            "chat": rep(cache.chat[ps]),
            "seg": np.concatenate([cache.segments[s] + j * nc for j in range(k)]),
            "anc": np.concatenate([t.ancestor[cs] - par.start + j * npar for j in range(k)]),
        })
    data = {"stages": stages, "FN": rep(src["F_terminal"]), "chat_N": rep(cache.chat_terminal)}
    cache.batch_data[k] = data
    return data


def _sweep(cache: FactorCache, prob: ProblemInstance, y: np.ndarray, affine: bool):
    """Backward/forward sweep for a batch ``y`` of shape (k, m)."""
    t = prob.tree
    N, lo = t.num_stages, t.leaf_offset
    k = y.shape[0]
    data = _stage_data(cache, prob, k)
    stages = data["stages"]
    ys, yt = prob.split_dual(y)
    rows = lambda a, sl: a[:, sl].reshape(-1, a.shape[-1])

    qhat = np.einsum("nji,nj->ni", data["FN"], yt.reshape(-1, prob.m_terminal))
    if affine:
        qhat += data["chat_N"]
    u_st = [None] * N
    for s in reversed(range(N)):
        d = stages[s]
        ch = t.nodes_at(s + 1)
        yc = rows(ys, slice(ch.start - 1, ch.stop - 1))
        u = np.add.reduceat(np.einsum("nij,nj->ni", d["Phi"], yc)
                            + np.einsum("nij,nj->ni", d["Theta"], qhat), d["seg"])
        q = np.add.reduceat(np.einsum("nji,nj->ni", d["D"], yc)
                            + np.einsum("nji,nj->ni", d["Lam"], qhat), d["seg"])
        if affine:
            u += d["sigma"]
            q += d["chat"]
        u_st[s], qhat = u, q

    x = np.empty((k, t.num_nodes, prob.n_x))
    u = np.empty((k, t.num_nonleaf, prob.n_u))
    xs = np.repeat(prob.root_state[None], k, axis=0) if affine else np.zeros((k, prob.n_x))
    x[:, 0] = xs
    for s in range(N):
        d = stages[s]
        us = u_st[s] + np.einsum("nij,nj->ni", d["K"], xs)
        par, ch = t.nodes_at(s), t.nodes_at(s + 1)
        u[:, par.start:par.stop] = us.reshape(k, -1, prob.n_u)
        anc = d["anc"]
        xs = np.einsum("nij,nj->ni", d["A"], xs[anc]) + np.einsum("nij,nj->ni", d["B"], us[anc])
        if affine:
            xs += d["c"]
        x[:, ch.start:ch.stop] = xs.reshape(k, -1, prob.n_x)
    return x, u


def dual_grad(cache: FactorCache, prob: ProblemInstance, y) -> PrimalPoint:
    """``x(y) = argmin_z <z, H'y> + f(z)``, feasible by forward simulation."""
    _check(cache, prob)
    x, u = _sweep(cache, prob, np.asarray(y, dtype=float)[None], affine=True)
    return PrimalPoint(x[0], u[0])


def hessian_vec(cache: FactorCache, prob: ProblemInstance, r) -> PrimalPoint:
    """Linear part ``x0(r)`` of ``x(.)``; the dual Hessian acts as ``r -> -H x0(r)``."""
    _check(cache, prob)
    x, u = _sweep(cache, prob, np.asarray(r, dtype=float)[None], affine=False)
    return PrimalPoint(x[0], u[0])


def hessian_vec_batch(cache: FactorCache, prob: ProblemInstance, rs) -> list[PrimalPoint]:
    """:func:`hessian_vec` for several vectors in a single lockstep sweep."""
    _check(cache, prob)
    x, u = _sweep(cache, prob, np.asarray(rs, dtype=float), affine=False)
    return [PrimalPoint(x[i], u[i]) for i in range(x.shape[0])]


def grad_fhat(cache: FactorCache, prob: ProblemInstance, y) -> np.ndarray:
    return -apply_H(prob, dual_grad(cache, prob, y))


def fhat_from_primal(prob: ProblemInstance, y, x: PrimalPoint, Hx=None) -> float:
    """``f-hat(y) = -<Hx(y), y> - f(x(y))`` given ``x = x(y)``."""
    if Hx is None:
        Hx = apply_H(prob, x)
    return -float(np.dot(Hx, y)) - stage_cost(prob, x)


def fhat_value(cache: FactorCache, prob: ProblemInstance, y) -> float:
    y = np.asarray(y, dtype=float)
    return fhat_from_primal(prob, y, dual_grad(cache, prob, y))


def dual_hessian_operator(cache: FactorCache, prob: ProblemInstance) -> LinearOperator:
    """The dual Hessian ``r -> -H x0(r)`` as a symmetric linear operator."""
    m = prob.dual_dim
    mv = lambda r: -apply_H(prob, hessian_vec(cache, prob, np.ravel(r)))
    return LinearOperator((m, m), matvec=mv, rmatvec=mv, dtype=float)


def estimate_lipschitz(cache: FactorCache, prob: ProblemInstance, method: str = "lanczos",
                       iters: int = 500, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest eigenvalue of the dual Hessian (Lipschitz constant of grad f-hat).

    ``method="power"`` runs plain power iteration, ``"lanczos"`` uses ARPACK.
    """
    op = dual_hessian_operator(cache, prob)
    m = prob.dual_dim
    if m == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(m)
    if method == "lanczos" and m > 2:
        val = eigsh(op, k=1, which="LA", v0=v, tol=tol, maxiter=max(iters, 10 * m),
                    return_eigenvectors=False)
        return float(val[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.matvec(v)
        new = float(np.dot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(new - est) <= tol * max(abs(new), 1.0):
            est = new
            break
        est = new
    return est
