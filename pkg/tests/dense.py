"""Dense reference computations used as independent test oracles.

Nothing here goes through the factor step or the tree sweeps: every matrix is
assembled node by node and solved with a dense linear solve.
"""

import itertools

import numpy as np


def _layout(prob):
    t = prob.tree
    nx, nu = prob.n_x, prob.n_u
    xi = lambda i: slice(i * nx, (i + 1) * nx)
    off = t.num_nodes * nx
    ui = lambda i: slice(off + i * nu, off + (i + 1) * nu)
    return xi, ui, off + t.num_nonleaf * nu


def dense_H(prob):
    """``m x (all states + all inputs)`` matrix of the constraint map."""
    t = prob.tree
    xi, ui, n = _layout(prob)
    m, mN = prob.m, prob.m_terminal
    H = np.zeros((prob.dual_dim, n))
    row = 0
    for j in range(1, t.num_nodes):
        a = t.ancestor[j]
        H[row:row + m, xi(a)] = prob.F[j]
        H[row:row + m, ui(a)] = prob.G[j]
        row += m
    for k, leaf in enumerate(range(t.leaf_offset, t.num_nodes)):
        H[row:row + mN, xi(leaf)] = prob.F_terminal[k]
        row += mN
    return H


def dense_cost(prob):
    """``(W, w)`` with smooth cost ``v'Wv + w'v`` over the full variable."""
    t = prob.tree
    pi = t.probability
    xi, ui, n = _layout(prob)
    W = np.zeros((n, n))
    w = np.zeros(n)
    for j in range(1, t.num_nodes):
        a = t.ancestor[j]
        W[xi(a), xi(a)] += pi[j] * prob.Q[j]
        W[ui(a), ui(a)] += pi[j] * prob.R[j]
        W[ui(a), xi(a)] += pi[j] * prob.S[j]
        W[xi(a), ui(a)] += pi[j] * prob.S[j].T
        w[xi(a)] += pi[j] * prob.q[j]
        w[ui(a)] += pi[j] * prob.r[j]
    for k, leaf in enumerate(range(t.leaf_offset, t.num_nodes)):
        W[xi(leaf), xi(leaf)] += pi[leaf] * prob.P_terminal[k]
        w[xi(leaf)] += pi[leaf] * prob.p_terminal[k]
    return W, w


def dense_dynamics(prob, homogeneous=False):
    """``(E, e)`` with ``E v = e`` encoding ``x^0 = p`` and the node dynamics."""
    t = prob.tree
    nx = prob.n_x
    xi, ui, n = _layout(prob)
    E = np.zeros((t.num_nodes * nx, n))
    e = np.zeros(t.num_nodes * nx)
    E[:nx, xi(0)] = np.eye(nx)
    if not homogeneous:
        e[:nx] = prob.root_state
    for j in range(1, t.num_nodes):
        a = t.ancestor[j]
        rows = slice(j * nx, (j + 1) * nx)
        E[rows, xi(j)] = np.eye(nx)
        E[rows, xi(a)] = -prob.A[j]
        E[rows, ui(a)] = -prob.B[j]
        if not homogeneous:
            e[rows] = prob.c[j]
    return E, e


def split_full(prob, v):
    t = prob.tree
    k = t.num_nodes * prob.n_x
    return v[:k].reshape(t.num_nodes, prob.n_x), v[k:].reshape(t.num_nonleaf, prob.n_u)


def kkt_solve(prob, y, homogeneous=False):
    """Minimiser of ``<Hv, y> + f(v)`` by one dense KKT solve; returns ``(x, u, mult)``."""
    W, w = dense_cost(prob)
    if homogeneous:
        w = np.zeros_like(w)
    E, e = dense_dynamics(prob, homogeneous)
    H = dense_H(prob)
    n, ne = W.shape[0], E.shape[0]
    K = np.block([[2 * W, E.T], [E, np.zeros((ne, ne))]])
    rhs = np.concatenate([-(w + H.T @ y), e])
    sol = np.linalg.solve(K, rhs)
    x, u = split_full(prob, sol[:n])
    return x, u, sol[n:]


def box_qp_enumerate(prob):
    """Exact solution of a tiny box-constrained instance by active-set enumeration.

    Every constraint row is tried as inactive, at its lower bound or at its
    upper bound; each combination is an equality-constrained QP. The cheapest
    primal-feasible candidate is the optimum.
    """
    W, w = dense_cost(prob)
    E, e = dense_dynamics(prob)
    H = dense_H(prob)
    g = prob.nonsmooth
    lo, hi = g.lower, g.upper
    n = W.shape[0]
    best, best_val = None, np.inf
    for pattern in itertools.product((0, -1, 1), repeat=H.shape[0]):
        rows = [i for i, s in enumerate(pattern) if s != 0]
        if any(np.isinf(lo[i] if pattern[i] < 0 else hi[i]) for i in rows):
            continue
        Aeq = np.vstack([E, H[rows]])
        beq = np.concatenate([e, [lo[i] if pattern[i] < 0 else hi[i] for i in rows]])
        K = np.block([[2 * W, Aeq.T], [Aeq, np.zeros((Aeq.shape[0], Aeq.shape[0]))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-w, beq]))
        except np.linalg.LinAlgError:
            continue
        v = sol[:n]
        if not np.allclose(K @ sol, np.concatenate([-w, beq]), atol=1e-9):
            continue
        z = H @ v
        if np.all(z >= lo - 1e-9) and np.all(z <= hi + 1e-9):
            val = v @ W @ v + w @ v
            if val < best_val:
                best, best_val = v, val
    return split_full(prob, best), best_val


def expm_series(M, terms=60):
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    M = np.asarray(M, dtype=float)
    nrm = np.abs(M).sum(axis=1).max()
    s = max(0, int(np.ceil(np.log2(nrm))) + 1) if nrm > 0 else 0
    A = M / 2 ** s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def zoh_series(Ac, Bc, Ts):
    """ZOH discretisation: ``A = e^{Ac Ts}``, ``B = int_0^Ts e^{Ac t} dt Bc`` via the block trick."""
    nx, nu = Bc.shape
    M = np.zeros((nx + nu, nx + nu))
    M[:nx, :nx] = Ac
    M[:nx, nx:] = Bc
    E = expm_series(M * Ts)
    return E[:nx, :nx], E[:nx, nx:]


def dense_bfgs_inverse(pairs, gamma0, n):
    """Inverse-Hessian BFGS matrix after applying ``pairs`` to ``gamma0 * I``."""
    Hm = gamma0 * np.eye(n)
    for s, q in pairs:
        rho = 1.0 / (s @ q)
        V = np.eye(n) - rho * np.outer(q, s)
        Hm = V.T @ Hm @ V + rho * np.outer(s, s)
    return Hm
