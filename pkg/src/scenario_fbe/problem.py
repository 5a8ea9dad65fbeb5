"""Problem data on a scenario tree: dynamics, quadratic costs and constraint blocks.

Indexing conventions
--------------------
* Per-node arrays (``A, B, c, Q, R, S, q, r, F, G``) have a leading axis of
  length ``num_nodes``. Row ``j >= 1`` holds the data of the edge
  ``anc(j) -> j``: the dynamics producing ``x^j`` and the stage cost and
  constraint block evaluated at ``(x^anc(j), u^anc(j))``. Row 0 is unused.
* Terminal arrays (``P_terminal, p_terminal, F_terminal``) are indexed by leaf
  number ``node - leaf_offset``.
* The dual vector is flat: the stage blocks of nodes ``1..num_nodes-1``
  (``m`` rows each) followed by the terminal blocks of the leaves
  (``m_terminal`` rows each).

Quadratic forms carry no 1/2 factor:
``phi(x, u) = x'Qx + 2u'Sx + u'Ru + q'x + r'u`` and ``V_f(x) = x'Px + p'x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, UnsupportedSpec, ZeroProbability
from .prox import Box, NoPenalty, ScaledL1, SeparableNonsmooth
from .tree import ScenarioTree

FEAS_TOL = 1e-8
PSD_TOL = 1e-10


@dataclass
class PrimalPoint:
    """States for every node and inputs for every non-leaf node."""

    x: np.ndarray  # (num_nodes, n_x)
    u: np.ndarray  # (num_nonleaf, n_u)

    def to_vector(self) -> np.ndarray:
        """Decision vector ``((u^i)_{nodes(0,N-1)}, (x^i)_{nodes(1,N)})``."""
        return np.concatenate([self.u.ravel(), self.x[1:].ravel()])

    def full_vector(self) -> np.ndarray:
        """All states (including the root) followed by all inputs."""
        return np.concatenate([self.x.ravel(), self.u.ravel()])

    def __add__(self, other):
        return PrimalPoint(self.x + other.x, self.u + other.u)

    def __sub__(self, other):
        return PrimalPoint(self.x - other.x, self.u - other.u)

    def __mul__(self, alpha):
        return PrimalPoint(alpha * self.x, alpha * self.u)

    __rmul__ = __mul__


def _stack(value, count, shape):
    """Per-node stack of ``value``; shared data is broadcast (and copied)."""
    arr = np.asarray(value, dtype=float)
    if arr.shape == (count,) + shape:
        return arr
    if arr.shape == shape:
        return np.array(np.broadcast_to(arr, (count,) + shape))
    raise DimensionMismatch(f"expected shape {(count,) + shape}, got {arr.shape}")


@dataclass(eq=False)
class ProblemInstance:
    """A scenario-tree optimal control problem with root state ``root_state``.

    The constructor accepts either per-node stacks or single matrices which
    are broadcast to every node (time-invariant data).
    """

    tree: ScenarioTree
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    q: np.ndarray
    r: np.ndarray
    P_terminal: np.ndarray
    p_terminal: np.ndarray
    F: np.ndarray
    G: np.ndarray
    F_terminal: np.ndarray
    stage_specs: tuple
    terminal_specs: tuple
    root_state: np.ndarray
    dual_scale: np.ndarray | None = None
    _nonsmooth: SeparableNonsmooth | None = field(default=None, repr=False)

    def __post_init__(self):
        nn, nl = self.tree.num_nodes, self.tree.num_leaves
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        nx = A.shape[-1]
        nu = B.shape[-1]
        m = np.asarray(self.F).shape[-2]
        mN = np.asarray(self.F_terminal).shape[-2]
        self.A = _stack(A, nn, (nx, nx))
        self.B = _stack(B, nn, (nx, nu))
        self.c = _stack(self.c, nn, (nx,))
        self.Q = _stack(self.Q, nn, (nx, nx))
        self.R = _stack(self.R, nn, (nu, nu))
        self.S = _stack(self.S, nn, (nu, nx))
        self.q = _stack(self.q, nn, (nx,))
        self.r = _stack(self.r, nn, (nu,))
        self.P_terminal = _stack(self.P_terminal, nl, (nx, nx))
        self.p_terminal = _stack(self.p_terminal, nl, (nx,))
        self.F = _stack(self.F, nn, (m, nx))
        self.G = _stack(self.G, nn, (m, nu))
        self.F_terminal = _stack(self.F_terminal, nl, (mN, nx))
        self.root_state = np.asarray(self.root_state, dtype=float).reshape(nx)
        specs = self.stage_specs
        if not isinstance(specs, (list, tuple)):
            specs = [specs] * (nn - 1)
        tspecs = self.terminal_specs
        if not isinstance(tspecs, (list, tuple)):
            tspecs = [tspecs] * nl
        if len(specs) != nn - 1 or len(tspecs) != nl:
            raise DimensionMismatch("one stage spec per non-root node and one terminal spec per leaf")
        self.stage_specs = tuple(specs)
        self.terminal_specs = tuple(tspecs)
        if self.dual_scale is not None:
            self.dual_scale = np.asarray(self.dual_scale, dtype=float).reshape(self.dual_dim)
        self._nonsmooth = None

    # -- dimensions ---------------------------------------------------------------
    @property
    def n_x(self) -> int:
        return self.A.shape[-1]

    @property
    def n_u(self) -> int:
        return self.B.shape[-1]

    @property
    def m(self) -> int:
        """Rows per stage constraint block."""
        return self.F.shape[1]

    @property
    def m_terminal(self) -> int:
        return self.F_terminal.shape[1]

    @property
    def primal_dim(self) -> int:
        t = self.tree
        return t.num_nonleaf * self.n_u + (t.num_nodes - 1) * self.n_x

    @property
    def dual_dim(self) -> int:
        t = self.tree
        return (t.num_nodes - 1) * self.m + t.num_leaves * self.m_terminal

    def split_dual(self, y):
        """Views ``(stage_blocks, terminal_blocks)`` of a flat dual vector.

        ``y`` may carry leading batch axes.
        """
        y = np.asarray(y)
        if y.shape[-1] != self.dual_dim:
            raise DimensionMismatch(f"dual vector of length {y.shape[-1]}, expected {self.dual_dim}")
        k = (self.tree.num_nodes - 1) * self.m
        lead = y.shape[:-1]
        return (y[..., :k].reshape(lead + (self.tree.num_nodes - 1, self.m)),
                y[..., k:].reshape(lead + (self.tree.num_leaves, self.m_terminal)))

    def zero_primal(self) -> PrimalPoint:
        t = self.tree
        return PrimalPoint(np.zeros((t.num_nodes, self.n_x)), np.zeros((t.num_nonleaf, self.n_u)))

    def primal_from_vector(self, v) -> PrimalPoint:
        """Inverse of :meth:`PrimalPoint.to_vector`; the root state is set to ``root_state``."""
        v = np.asarray(v, dtype=float)
        if v.size != self.primal_dim:
            raise DimensionMismatch(f"primal vector of length {v.size}, expected {self.primal_dim}")
        t = self.tree
        k = t.num_nonleaf * self.n_u
        x = np.vstack([self.root_state, v[k:].reshape(t.num_nodes - 1, self.n_x)])
        return PrimalPoint(x, v[:k].reshape(t.num_nonleaf, self.n_u).copy())

    def with_root_state(self, p) -> "ProblemInstance":
        out = replace(self, root_state=np.array(p, dtype=float))
        out._nonsmooth = self._nonsmooth
        return out

    # -- nonsmooth part ------------------------------------------------------------
    @property
    def nonsmooth(self) -> SeparableNonsmooth:
        """The compiled function g (block weights are node probabilities)."""
        if self._nonsmooth is None:
            prob = self.tree.probability
            blocks = [(s, prob[j + 1], self.m) for j, s in enumerate(self.stage_specs)]
            lo = self.tree.leaf_offset
            blocks += [(s, prob[lo + k], self.m_terminal) for k, s in enumerate(self.terminal_specs)]
            self._nonsmooth = SeparableNonsmooth(blocks)
        return self._nonsmooth

    # -- checks ---------------------------------------------------------------------
    def validate(self) -> list[str]:
        """List violated invariants of the tree, costs and constraint blocks."""
        out = list(self.tree.validate())
        nn = self.tree.num_nodes
        sym = lambda M: np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0)
        eig = lambda M: np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
        if nn > 1:
            Q, R, S = self.Q[1:], self.R[1:], self.S[1:]
            rmin = eig(R).min(axis=-1)
            qmin = eig(Q).min(axis=-1)
            W = np.block([[Q, np.swapaxes(S, -1, -2)], [S, R]])
            wmin = eig(W).min(axis=-1)
            for j in range(nn - 1):
                node = j + 1
                if sym(Q[j]) > 1e-12 or sym(R[j]) > 1e-12:
                    out.append(f"node {node}: cost matrices Q/R not symmetric")
                if not rmin[j] > 0:
                    out.append(f"node {node}: R not positive definite (min eig {rmin[j]:.3g})")
                if qmin[j] < -PSD_TOL:
                    out.append(f"node {node}: Q not positive semidefinite (min eig {qmin[j]:.3g})")
                if wmin[j] < -PSD_TOL:
                    out.append(f"node {node}: [[Q, S'], [S, R]] not positive semidefinite "
                               f"(min eig {wmin[j]:.3g})")
        pmin = eig(self.P_terminal).min(axis=-1)
        for k in np.flatnonzero(~(pmin > 0)):
            out.append(f"leaf {self.tree.leaf_offset + k}: terminal P not positive definite")
        for label, specs, size, first in (("node", self.stage_specs, self.m, 1),
                                          ("leaf", self.terminal_specs, self.m_terminal,
                                           self.tree.leaf_offset)):
            for k, s in enumerate(specs):
                if isinstance(s, Box):
                    if s.lower.size != size:
                        out.append(f"{label} {first + k}: box has {s.lower.size} bounds for "
                                   f"{size} rows")
                    elif np.any(s.lower > s.upper):
                        out.append(f"{label} {first + k}: box lower bound exceeds upper bound")
                elif isinstance(s, ScaledL1):
                    if s.gamma < 0:
                        out.append(f"{label} {first + k}: negative l1 weight")
                elif not isinstance(s, NoPenalty):
                    pass  # custom blocks validate themselves
        return out

    def dynamics_residual(self, pt: PrimalPoint) -> float:
        """Largest violation of ``x^0 = p`` and the node dynamics."""
        t = self.tree
        anc = t.ancestor[1:]
        pred = (np.einsum("nij,nj->ni", self.A[1:], pt.x[anc])
                + np.einsum("nij,nj->ni", self.B[1:], pt.u[anc]) + self.c[1:])
        err = np.abs(pt.x[1:] - pred).max(initial=0.0)
        return max(err, float(np.abs(pt.x[0] - self.root_state).max()))


def apply_H(prob: ProblemInstance, pt: PrimalPoint) -> np.ndarray:
    """Constraint map ``z^j = F^j x^anc(j) + G^j u^anc(j)``, ``z_N^i = F_N^i x^i``."""
    t = prob.tree
    if pt.x.shape != (t.num_nodes, prob.n_x) or pt.u.shape != (t.num_nonleaf, prob.n_u):
        raise DimensionMismatch("primal point does not match the problem dimensions")
    anc = t.ancestor[1:]
    zs = np.einsum("nij,nj->ni", prob.F[1:], pt.x[anc]) + np.einsum("nij,nj->ni", prob.G[1:], pt.u[anc])
    zt = np.einsum("nij,nj->ni", prob.F_terminal, pt.x[t.leaf_offset:])
    return np.concatenate([zs.ravel(), zt.ravel()])


def apply_H_adjoint(prob: ProblemInstance, y) -> PrimalPoint:
    """Adjoint of :func:`apply_H` on the (x including root, u) space."""
    t = prob.tree
    ys, yt = prob.split_dual(y)
    out = prob.zero_primal()
    if t.num_nodes > 1:
        starts = np.array([t.children[i][0] - 1 for i in range(t.num_nonleaf)])
        out.x[:t.num_nonleaf] = np.add.reduceat(np.einsum("nji,nj->ni", prob.F[1:], ys), starts, axis=0)
        out.u[:] = np.add.reduceat(np.einsum("nji,nj->ni", prob.G[1:], ys), starts, axis=0)
    out.x[t.leaf_offset:] += np.einsum("nji,nj->ni", prob.F_terminal, yt)
    return out


def stage_cost(prob: ProblemInstance, pt: PrimalPoint, homogeneous: bool = False) -> float:
    """The smooth cost of ``pt`` ignoring feasibility; linear terms dropped if ``homogeneous``."""
    t = prob.tree
    pi = t.probability
    anc = t.ancestor[1:]
    xa, ua = pt.x[anc], pt.u[anc]
    quad = (np.einsum("ni,nij,nj->n", xa, prob.Q[1:], xa)
            + 2 * np.einsum("ni,nij,nj->n", ua, prob.S[1:], xa)
            + np.einsum("ni,nij,nj->n", ua, prob.R[1:], ua))
    xl = pt.x[t.leaf_offset:]
    term = np.einsum("ni,nij,nj->n", xl, prob.P_terminal, xl)
    if not homogeneous:
        quad = quad + np.einsum("ni,ni->n", prob.q[1:], xa) + np.einsum("ni,ni->n", prob.r[1:], ua)
        term = term + np.einsum("ni,ni->n", prob.p_terminal, xl)
    return float(pi[1:] @ quad + pi[t.leaf_offset:] @ term)


def eval_f(prob: ProblemInstance, pt: PrimalPoint) -> float:
    """Expected smooth cost plus the indicator of the dynamics."""
    if prob.dynamics_residual(pt) > FEAS_TOL:
        return np.inf
    return stage_cost(prob, pt)


def block_probabilities(prob: ProblemInstance) -> np.ndarray:
    """Probability of the node owning each dual component."""
    t = prob.tree
    return np.concatenate([np.repeat(t.probability[1:], prob.m),
                           np.repeat(t.probability[t.leaf_offset:], prob.m_terminal)])


def precondition(prob: ProblemInstance) -> ProblemInstance:
    """Rescale every dual block by ``1/sqrt(pi)``.

    Constraint rows are multiplied by ``sqrt(pi)``; box bounds scale with them and
    l1 weights are divided by ``sqrt(pi)`` so the new g is an exact
    reformulation. ``dual_scale`` records ``sqrt(pi)`` per dual component so that
    original duals are recovered as ``y = dual_scale * ybar``.
    """
    t = prob.tree
    pi = t.probability
    if np.any(pi <= 0):
        raise ZeroProbability("preconditioning needs positive node probabilities")
    s_stage = np.sqrt(pi[1:])
    s_term = np.sqrt(pi[t.leaf_offset:])

    def scale_spec(spec, s):
        if isinstance(spec, Box):
            return Box(s * spec.lower, s * spec.upper)
        if isinstance(spec, ScaledL1):
            return ScaledL1(spec.gamma / s)
        if isinstance(spec, NoPenalty):
            return spec
        raise UnsupportedSpec(f"cannot precondition custom block {type(spec).__name__}")

    F = prob.F.copy()
    G = prob.G.copy()
    F[1:] *= s_stage[:, None, None]
    G[1:] *= s_stage[:, None, None]
    FN = prob.F_terminal * s_term[:, None, None]
    scale = block_probabilities(prob) ** 0.5
    if prob.dual_scale is not None:
        scale = scale * prob.dual_scale
    return replace(prob, F=F, G=G, F_terminal=FN,
                   stage_specs=tuple(scale_spec(sp, s) for sp, s in zip(prob.stage_specs, s_stage)),
                   terminal_specs=tuple(scale_spec(sp, s) for sp, s in zip(prob.terminal_specs, s_term)),
                   dual_scale=scale)
