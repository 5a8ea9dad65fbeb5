"""Scenario trees: stage-ordered node graphs carrying scenario probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonStochasticMatrix, StageOutOfRange

PROB_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Rooted tree with nodes numbered breadth-first by stage.

    Node 0 is the root (stage 0). Per-node arrays are indexed by node id.
    Nodes of a stage form a contiguous id range, and within a stage the
    ancestors are non-decreasing, so the children of every node occupy a
    contiguous id range as well.

    Attributes
    ----------
    ancestor : ndarray of int, shape (num_nodes,)
        Parent id; ``-1`` for the root.
    probability : ndarray of float, shape (num_nodes,)
        Unconditional node probabilities.
    mode : ndarray of int, shape (num_nodes,)
        Optional realisation label per node (Markov mode), ``-1`` if unknown.
    """

    ancestor: np.ndarray
    probability: np.ndarray
    mode: np.ndarray | None = None
    node_stage: np.ndarray = field(init=False)
    stage_offsets: np.ndarray = field(init=False)
    children: tuple = field(init=False)

    def __post_init__(self):
        anc = np.asarray(self.ancestor, dtype=np.int64)
        prob = np.asarray(self.probability, dtype=float)
        if anc.ndim != 1 or prob.shape != anc.shape or anc.size == 0:
            raise ValueError("ancestor and probability must be 1-D arrays of equal length")
        num_nodes = anc.size
        mode = (np.full(num_nodes, -1, dtype=np.int64) if self.mode is None
                else np.asarray(self.mode, dtype=np.int64))
        stage = np.zeros(num_nodes, dtype=np.int64)
        children = [[] for _ in range(num_nodes)]
        for i in range(1, num_nodes):
            a = anc[i]
            if not 0 <= a < i:
                raise ValueError(f"node {i}: ancestor {a} must precede it")
            stage[i] = stage[a] + 1
            children[a].append(i)
        num_stages = int(stage.max())
        counts = np.bincount(stage, minlength=num_stages + 1)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for arr in (anc, prob, mode, stage, offsets):
            arr.flags.writeable = False
        object.__setattr__(self, "ancestor", anc)
        object.__setattr__(self, "probability", prob)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "node_stage", stage)
        object.__setattr__(self, "stage_offsets", offsets)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))

    # -- sizes ---------------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return self.ancestor.size

    @property
    def num_stages(self) -> int:
        """Horizon N (the stage index of the leaves)."""
        return self.stage_offsets.size - 2

    @property
    def num_nonleaf(self) -> int:
        return int(self.stage_offsets[-2])

    @property
    def num_leaves(self) -> int:
        return self.num_nodes - self.num_nonleaf

    @property
    def leaf_offset(self) -> int:
        return int(self.stage_offsets[-2])

    def nodes_at(self, t1: int, t2: int | None = None) -> range:
        """Node ids with stage in ``[t1, t2]`` (``t2`` defaults to ``t1``)."""
        if t2 is None:
            t2 = t1
        if not 0 <= t1 <= t2 <= self.num_stages:
            raise StageOutOfRange(f"stages [{t1}, {t2}] outside [0, {self.num_stages}]")
        return range(int(self.stage_offsets[t1]), int(self.stage_offsets[t2 + 1]))

    def conditional_probabilities(self, i: int) -> np.ndarray:
        """The vector pi^[i] of child probabilities conditioned on node ``i``."""
        kids = list(self.children[i])
        return self.probability[kids] / self.probability[i]

    def child_segments(self, t: int) -> np.ndarray:
        """Start offsets (relative to ``nodes(t+1)``) of each stage-t node's children.

        Suitable for ``np.add.reduceat`` over arrays indexed by ``nodes(t+1)``.
        """
        first = int(self.stage_offsets[t + 1])
        return np.array([self.children[i][0] - first for i in self.nodes_at(t)], dtype=np.int64)

    # -- constructors ----------------------------------------------------------
    @classmethod
    def from_ancestors(cls, ancestor, probability, mode=None) -> "ScenarioTree":
        return cls(np.asarray(ancestor), np.asarray(probability, dtype=float),
                   None if mode is None else np.asarray(mode))

    @classmethod
    def from_branching(cls, branching, rng=None) -> "ScenarioTree":
        """Tree whose stage-t nodes each have ``branching[t]`` children.

        Conditional probabilities are drawn from a flat Dirichlet distribution
        when ``rng`` is given, and are uniform otherwise.
        """
        ancestor, probability = [-1], [1.0]
        frontier = [0]
        for b in branching:
            if b < 1:
                raise ValueError("branching factors must be positive")
            nxt = []
            for i in frontier:
                cond = np.full(b, 1.0 / b) if rng is None else rng.dirichlet(np.ones(b))
                for k in range(b):
                    ancestor.append(i)
                    probability.append(probability[i] * cond[k])
                    nxt.append(len(ancestor) - 1)
            frontier = nxt
        return cls.from_ancestors(ancestor, probability)

    # -- checks -----------------------------------------------------------------
    def validate(self) -> list[str]:
        """Return a list of invariant violations; empty when the tree is valid."""
        out = []
        prob, anc, stage = self.probability, self.ancestor, self.node_stage
        N = self.num_stages
        if abs(prob[0] - 1.0) > PROB_TOL:
            out.append(f"node 0: root probability != 1 (got {prob[0]:.12g})")
        for i in np.flatnonzero((prob <= 0) | (prob > 1 + PROB_TOL)):
            out.append(f"node {i}: probability {prob[i]:.12g} outside (0, 1]")
        for t in range(N + 1):
            s = prob[self.nodes_at(t)].sum()
            if abs(s - 1.0) > PROB_TOL:
                out.append(f"stage {t}: probabilities sum to {s:.12g}, not 1")
        if np.any(np.diff(stage) < 0):
            out.append("tree: node ids are not ordered by stage")
        for i in range(self.num_nodes):
            kids = self.children[i]
            if stage[i] < N and not kids:
                out.append(f"node {i}: leaf at stage {stage[i]} < N={N}")
            if stage[i] == N and kids:
                out.append(f"node {i}: stage-N node has children")
            if kids:
                s = prob[list(kids)].sum()
                if abs(s - prob[i]) > PROB_TOL:
                    out.append(f"node {i}: children probabilities sum to {s:.12g}, "
                               f"expected {prob[i]:.12g}")
                for j in kids:
                    if anc[j] != i:
                        out.append(f"node {j}: listed as child of {i} but ancestor is {anc[j]}")
                    if stage[j] != stage[i] + 1:
                        out.append(f"node {j}: stage does not increase by one from {i}")
                if list(kids) != list(range(kids[0], kids[0] + len(kids))):
                    out.append(f"node {i}: children ids are not contiguous")
        if np.any(np.diff(anc[1:]) < 0):
            out.append("tree: ancestors are not non-decreasing in id order")
        return out


def build_from_markov(num_modes: int, transition, initial_dist, horizon: int) -> ScenarioTree:
    """Enumerate all positive-probability mode paths of a Markov chain.

    Parameters
    ----------
    num_modes : int
    transition : array_like, shape (num_modes, num_modes)
        Row-stochastic transition matrix.
    initial_dist : array_like, shape (num_modes,)
        Distribution of the mode realised at stage 1.
    horizon : int
        Number of stages N; leaves live at stage N.
    """
    P = np.asarray(transition, dtype=float).reshape(num_modes, num_modes)
    p0 = np.asarray(initial_dist, dtype=float).reshape(num_modes)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > PROB_TOL):
        raise NonStochasticMatrix("transition rows must be nonnegative and sum to 1")
    if np.any(p0 < 0) or abs(p0.sum() - 1.0) > PROB_TOL:
        raise NonStochasticMatrix("initial distribution must be nonnegative and sum to 1")

    ancestor, probability, mode = [-1], [1.0], [-1]
    frontier = [0]
    for t in range(horizon):
        nxt = []
        for i in frontier:
            branch = p0 if t == 0 else P[mode[i]]
            for w in np.flatnonzero(branch > 0):
                ancestor.append(i)
                probability.append(probability[i] * branch[w])
                mode.append(int(w))
                nxt.append(len(ancestor) - 1)
        frontier = nxt
    return ScenarioTree.from_ancestors(ancestor, probability, mode)
