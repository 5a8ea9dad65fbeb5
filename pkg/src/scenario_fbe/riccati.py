"""Offline factor step: backward dynamic programming over the scenario tree.

For a dual vector ``y`` the primal minimiser ``x(y)`` of
``<Hx, y> + f(x)`` is obtained by eliminating the inputs stage by stage. With
the children value functions ``V^j(x) = x'P^j x + v^j'x`` the input at a
non-leaf node ``i`` is ``u^i = K^i x^i + ubar^i`` where

    Rbar^i  = sum_j pi^j R_j + B_j' P^j B_j
    M^i     = sum_j pi^j S_j + B_j' P^j A_j
    K^i     = -Rbar^-1 M^i
    ubar^i  = sigma^i + sum_j Phi^j y^j + Theta^j v^j

and the linear value term propagates as
``v^i = chat^i + sum_j D^j' y^j + Lambda^j' v^j``. Per-edge matrices are stored
at the child id ``j``; per-node quantities at the parent id ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotStronglyConvex, ShapeChanged
from .problem import ProblemInstance

MIN_CURVATURE = 1e-10

_MATRIX_FIELDS = ("A", "B", "Q", "R", "S", "P_terminal", "F", "G", "F_terminal")
_AFFINE_FIELDS = ("c", "q", "r", "p_terminal")


@dataclass(eq=False)
class FactorCache:
    """Matrices consumed by the online dual-gradient and Hessian sweeps."""

    K: np.ndarray         # (num_nonleaf, n_u, n_x)
    sigma: np.ndarray     # (num_nonleaf, n_u)
    chat: np.ndarray      # (num_nonleaf, n_x)
    chat_terminal: np.ndarray  # (num_leaves, n_x)
    Phi: np.ndarray       # (num_nodes, n_u, m), row 0 unused
    Theta: np.ndarray     # (num_nodes, n_u, n_x)
    D: np.ndarray         # (num_nodes, m, n_x)
    Lam: np.ndarray       # (num_nodes, n_x, n_x)
    P: np.ndarray         # (num_nodes, n_x, n_x) value matrices
    chol: np.ndarray      # (num_nonleaf, n_u, n_u) Cholesky factors of Rbar
    segments: tuple       # per stage, reduceat offsets of children
    child_starts: np.ndarray  # first child (minus one) of every non-leaf node
    source: dict          # arrays the cache was built from
    batch_data: dict = field(default_factory=dict, repr=False)  # per-stage data tiled for batches

    def matches(self, prob: ProblemInstance) -> bool:
        for name in _MATRIX_FIELDS + _AFFINE_FIELDS:
            a, b = self.source[name], getattr(prob, name)
            if a is not b and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True


def _chol_solve(L, X):
    """Solve ``(L L') Z = X`` for batched lower-triangular factors ``L``."""
    return np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, X))


def _affine_terms(prob, P, chol, K, Lam, segments):
    t = prob.tree
    pi = t.probability
    nl = t.num_nonleaf
    sigma = np.zeros((nl, prob.n_u))
    chat = np.zeros((nl, prob.n_x))
    for s in range(t.num_stages):
        par, ch = t.nodes_at(s), t.nodes_at(s + 1)
        ch = slice(ch.start, ch.stop)
        seg = segments[s]
        pc = pi[ch][:, None]
        Pc_c = np.einsum("nij,nj->ni", P[ch], prob.c[ch])
        rhs = np.add.reduceat(pc * prob.r[ch] + 2 * np.einsum("nji,nj->ni", prob.B[ch], Pc_c), seg)
        sigma[par.start:par.stop] = -0.5 * _chol_solve(chol[par.start:par.stop], rhs[..., None])[..., 0]
        Kc = K[t.ancestor[ch]]
        chat[par.start:par.stop] = np.add.reduceat(
            pc * (prob.q[ch] + np.einsum("nji,nj->ni", Kc, prob.r[ch]))
            + 2 * np.einsum("nji,nj->ni", Lam[ch], Pc_c), seg)
    chat_terminal = pi[t.leaf_offset:, None] * prob.p_terminal
    return sigma, chat, chat_terminal


def factor(prob: ProblemInstance) -> FactorCache:
    """Run the backward recursion; independent of the root state and the dual."""
    t = prob.tree
    pi = t.probability
    nn, nl = t.num_nodes, t.num_nonleaf
    nx, nu, m = prob.n_x, prob.n_u, prob.m
    P = np.zeros((nn, nx, nx))
    P[t.leaf_offset:] = pi[t.leaf_offset:, None, None] * prob.P_terminal
    K = np.zeros((nl, nu, nx))
    chol = np.zeros((nl, nu, nu))
    Phi = np.zeros((nn, nu, m))
    Theta = np.zeros((nn, nu, nx))
    D = np.zeros((nn, m, nx))
    Lam = np.zeros((nn, nx, nx))
    segments = tuple(t.child_segments(s) for s in range(t.num_stages))
    tr = lambda M: np.swapaxes(M, -1, -2)

    for s in reversed(range(t.num_stages)):
        par, ch = t.nodes_at(s), t.nodes_at(s + 1)
        ps, ch = slice(par.start, par.stop), slice(ch.start, ch.stop)
        seg = segments[s]
        pc = pi[ch][:, None, None]
        Ac, Bc, Pc = prob.A[ch], prob.B[ch], P[ch]
        PA, PB = Pc @ Ac, Pc @ Bc
        Rbar = np.add.reduceat(pc * prob.R[ch] + tr(Bc) @ PB, seg)
        M = np.add.reduceat(pc * prob.S[ch] + tr(Bc) @ PA, seg)
        Qbar = np.add.reduceat(pc * prob.Q[ch] + tr(Ac) @ PA, seg)
        Rbar = 0.5 * (Rbar + tr(Rbar))
        emin = np.linalg.eigvalsh(Rbar).min(axis=-1)
        bad = np.flatnonzero(emin < MIN_CURVATURE)
        if bad.size:
            i = par.start + bad[0]
            raise NotStronglyConvex(f"node {i}: eliminated input Hessian has min eigenvalue "
                                    f"{emin[bad[0]]:.3g}")
        L = np.linalg.cholesky(Rbar)
        chol[ps] = L
        K[ps] = -_chol_solve(L, M)
        Pi = Qbar + tr(M) @ K[ps]
        P[ps] = 0.5 * (Pi + tr(Pi))

        rel = t.ancestor[ch]
        Kc, Lc = K[rel], L[rel - par.start]
        Lam[ch] = Ac + Bc @ Kc
        D[ch] = prob.F[ch] + prob.G[ch] @ Kc
        Phi[ch] = -0.5 * _chol_solve(Lc, tr(prob.G[ch]))
        Theta[ch] = -0.5 * _chol_solve(Lc, tr(Bc))

    sigma, chat, chat_terminal = _affine_terms(prob, P, chol, K, Lam, segments)
    child_starts = np.array([t.children[i][0] - 1 for i in range(nl)], dtype=np.int64)
    source = {name: getattr(prob, name) for name in _MATRIX_FIELDS + _AFFINE_FIELDS}
    return FactorCache(K=K, sigma=sigma, chat=chat, chat_terminal=chat_terminal, Phi=Phi,
                       Theta=Theta, D=D, Lam=Lam, P=P, chol=chol, segments=segments,
                       child_starts=child_starts, source=source)


def refactor_affine(cache: FactorCache, prob: ProblemInstance) -> FactorCache:
    """Recompute only ``sigma`` and ``chat`` after a change of ``c, q, r`` or ``p_terminal``.

    The matrix data of ``prob`` must be the data the cache was built from.
    """
    for name in _MATRIX_FIELDS + _AFFINE_FIELDS:
        if cache.source[name].shape != getattr(prob, name).shape:
            raise ShapeChanged(f"{name} changed shape from {cache.source[name].shape} "
                               f"to {getattr(prob, name).shape}")
    sigma, chat, chat_terminal = _affine_terms(prob, cache.P, cache.chol, cache.K, cache.Lam,
                                               cache.segments)
    source = dict(cache.source)
    source.update({name: getattr(prob, name) for name in _AFFINE_FIELDS})
    return FactorCache(K=cache.K, sigma=sigma, chat=chat, chat_terminal=chat_terminal,
                       Phi=cache.Phi, Theta=cache.Theta, D=cache.D, Lam=cache.Lam, P=cache.P,
                       chol=cache.chol, segments=cache.segments, child_starts=cache.child_starts,
                       source=source)
