"""Benchmark and test instance generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParams
from .problem import PrimalPoint, ProblemInstance, apply_H
from .prox import Box, NoPenalty, ScaledL1
from .tree import ScenarioTree, build_from_markov


@dataclass(frozen=True)
class SpringMassParams:
    """Spring-mass-damper array; SI units throughout."""

    mass: float = 5.0
    stiffness: float = 1.0
    damping: float = 0.1
    u_max: float = 2.0
    v_max: float = 5.0
    horizon: int = 11
    sampling_time: float = 0.5
    q_weight: float = 5.0
    r_weight: float = 2.0
    terminal_weight: float = 100.0
    disturbance: tuple = (0.0, 0.1)
    initial_dist: tuple = (0.5, 0.5)
    transition: tuple = ((0.1, 0.9), (0.9, 0.1))


def spring_mass_continuous(masses: int, p: SpringMassParams):
    """Continuous-time ``(Ac, Bc)`` for state ``(positions, velocities)``.

    Mass ``j`` is tied to its neighbours (walls at both ends) by springs and
    dampers; actuator ``j`` pushes masses ``j`` and ``j+1`` apart.
    """
    M = masses
    lap = 2 * np.eye(M) - np.eye(M, k=1) - np.eye(M, k=-1)
    Ac = np.zeros((2 * M, 2 * M))
    Ac[:M, M:] = np.eye(M)
    Ac[M:, :M] = -p.stiffness / p.mass * lap
    Ac[M:, M:] = -p.damping / p.mass * lap
    act = np.zeros((M, M - 1))
    for j in range(M - 1):
        act[j, j] = 1.0
        act[j + 1, j] = -1.0
    Bc = np.vstack([np.zeros((M, M - 1)), act / p.mass])
    return Ac, Bc


def zoh(Ac, Bc, Ts):
    """Zero-order-hold discretisation via the augmented matrix exponential."""
    nx, nu = Bc.shape
    aug = np.zeros((nx + nu, nx + nu))
    aug[:nx, :nx] = Ac
    aug[:nx, nx:] = Bc
    E = expm(aug * Ts)
    return E[:nx, :nx], E[:nx, nx:]


def gen_spring_mass(masses: int = 5, params: SpringMassParams | None = None,
                    root_state=None) -> ProblemInstance:
    """Markov-jump spring-mass-damper problem on a full scenario tree.

    Inputs and velocities are boxed at every stage; velocities also at the
    leaves. The disturbance of the mode realised at a node is added to every
    state component.
    """
    p = params or SpringMassParams()
    if masses < 2:
        raise InvalidParams("at least two masses are needed")
    if min(p.mass, p.sampling_time, p.r_weight, p.terminal_weight) <= 0 or p.horizon < 1:
        raise InvalidParams("mass, sampling time, weights and horizon must be positive")
    if min(p.stiffness, p.damping, p.q_weight, p.u_max, p.v_max) < 0:
        raise InvalidParams("stiffness, damping, state weight and bounds must be nonnegative")
    M, nx, nu = masses, 2 * masses, masses - 1
    Ac, Bc = spring_mass_continuous(M, p)
    A, B = zoh(Ac, Bc, p.sampling_time)
    modes = len(p.initial_dist)
    tree = build_from_markov(modes, p.transition, p.initial_dist, p.horizon)
    dist = np.asarray(p.disturbance, dtype=float)
    c = np.zeros((tree.num_nodes, nx))
    c[1:] = dist[tree.mode[1:]][:, None]

    F = np.zeros((nu + M, nx))
    F[nu:, M:] = np.eye(M)
    G = np.zeros((nu + M, nu))
    G[:nu] = np.eye(nu)
    FN = np.zeros((M, nx))
    FN[:, M:] = np.eye(M)
    stage_box = Box(np.r_[-p.u_max * np.ones(nu), -p.v_max * np.ones(M)],
                    np.r_[p.u_max * np.ones(nu), p.v_max * np.ones(M)])
    term_box = Box(-p.v_max * np.ones(M), p.v_max * np.ones(M))
    return ProblemInstance(
        tree=tree, A=A, B=B, c=c,
        Q=p.q_weight * np.eye(nx), R=p.r_weight * np.eye(nu), S=np.zeros((nu, nx)),
        q=np.zeros(nx), r=np.zeros(nu),
        P_terminal=p.terminal_weight * np.eye(nx), p_terminal=np.zeros(nx),
        F=F, G=G, F_terminal=FN,
        stage_specs=stage_box, terminal_specs=term_box,
        root_state=np.zeros(nx) if root_state is None else root_state)


def sample_spring_mass_states(masses: int, count: int, seed, params: SpringMassParams | None = None,
                              position_range: float | None = None, margin: float = 0.5):
    """Initial states drawn uniformly from the state box shrunk by ``margin``.

    Positions are unconstrained in the model; their sampling range defaults to
    the velocity bound.
    """
    p = params or SpringMassParams()
    rng = np.random.default_rng(seed)
    prange = p.v_max if position_range is None else position_range
    hi = margin * np.r_[prange * np.ones(masses), p.v_max * np.ones(masses)]
    return rng.uniform(-hi, hi, size=(count, 2 * masses))


def _simulate(prob: ProblemInstance, u) -> PrimalPoint:
    t = prob.tree
    x = np.zeros((t.num_nodes, prob.n_x))
    x[0] = prob.root_state
    for j in range(1, t.num_nodes):
        a = t.ancestor[j]
        x[j] = prob.A[j] @ x[a] + prob.B[j] @ u[a] + prob.c[j]
    return PrimalPoint(x, u)


def gen_random_instance(seed, dims=(3, 2, 2, 2), tree_shape=(2, 2), kinds=("box",),
                        box_margin=(0.2, 1.0)) -> ProblemInstance:
    """Random strongly convex instance that is strictly feasible by construction.

    Parameters
    ----------
    seed : int
    dims : (n_x, n_u, m, m_terminal)
    tree_shape : sequence of int or ScenarioTree
        Branching factor per stage (Dirichlet probabilities) or a ready tree.
    kinds : sequence of {"box", "l1", "none"}
        Block types; each block draws one uniformly.
    box_margin : (float, float)
        Box bounds enclose both 0 and a simulated reference point with a
        uniform slack drawn from this range.
    """
    rng = np.random.default_rng(seed)
    nx, nu, m, mN = dims
    tree = tree_shape if isinstance(tree_shape, ScenarioTree) else \
        ScenarioTree.from_branching(tree_shape, rng)
    nn, nl = tree.num_nodes, tree.num_leaves

    A = rng.standard_normal((nn, nx, nx))
    rho = np.abs(np.linalg.eigvals(A)).max(axis=1)
    A *= (rng.uniform(0.7, 1.1, nn) / rho)[:, None, None]
    B = rng.standard_normal((nn, nx, nu))
    c = 0.1 * rng.standard_normal((nn, nx))
    L = rng.standard_normal((nn, nx + nu, nx + nu))
    W = L @ np.swapaxes(L, 1, 2) / (nx + nu)
    Q = W[:, :nx, :nx]
    S = W[:, nx:, :nx]
    R = W[:, nx:, nx:] + 0.1 * np.eye(nu)
    q = 0.5 * rng.standard_normal((nn, nx))
    r = 0.5 * rng.standard_normal((nn, nu))
    LP = rng.standard_normal((nl, nx, nx))
    PN = LP @ np.swapaxes(LP, 1, 2) / nx + 0.5 * np.eye(nx)
    pN = 0.5 * rng.standard_normal((nl, nx))
    F = rng.standard_normal((nn, m, nx))
    G = rng.standard_normal((nn, m, nu))
    FN = rng.standard_normal((nl, mN, nx))
    p = rng.standard_normal(nx)

    base = ProblemInstance(tree=tree, A=A, B=B, c=c, Q=Q, R=R, S=S, q=q, r=r, P_terminal=PN,
                           p_terminal=pN, F=F, G=G, F_terminal=FN,
                           stage_specs=NoPenalty(), terminal_specs=NoPenalty(), root_state=p)
    z_ref = apply_H(base, _simulate(base, 0.3 * rng.standard_normal((tree.num_nonleaf, nu))))
    zs, zt = base.split_dual(z_ref)

    def block(z):
        kind = kinds[rng.integers(len(kinds))]
        if kind == "box":
            lo = np.minimum(z, 0) - rng.uniform(*box_margin, z.size)
            hi = np.maximum(z, 0) + rng.uniform(*box_margin, z.size)
            return Box(lo, hi)
        if kind == "l1":
            return ScaledL1(float(rng.uniform(0.1, 1.0)))
        if kind == "none":
            return NoPenalty()
        raise InvalidParams(f"unknown block kind {kind!r}")

    stage_specs = tuple(block(z) for z in zs)
    terminal_specs = tuple(block(z) for z in zt)
    return ProblemInstance(tree=tree, A=A, B=B, c=c, Q=Q, R=R, S=S, q=q, r=r, P_terminal=PN,
                           p_terminal=pN, F=F, G=G, F_terminal=FN, stage_specs=stage_specs,
                           terminal_specs=terminal_specs, root_state=p)
