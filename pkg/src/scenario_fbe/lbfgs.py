"""Limited-memory BFGS with a safeguarded curvature test."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DimensionMismatch


class LbfgsBuffer:
    """FIFO store of the ``memory`` most recent accepted pairs ``(s, q)``.

    Parameters
    ----------
    memory : int
        Number of pairs kept.
    eps_curv : float
        Safeguard: a pair is accepted iff ``<s, q> > eps_curv ||s||^2 scale_ref``.
    """

    def __init__(self, memory: int = 5, eps_curv: float = 1e-12):
        if memory < 1:
            raise ValueError("memory must be at least 1")
        self.memory = int(memory)
        self.eps_curv = float(eps_curv)
        self.pairs = deque(maxlen=self.memory)  # (s, q, rho) with rho = <s, q>

    def __len__(self):
        return len(self.pairs)

    @property
    def gamma0(self) -> float:
        if not self.pairs:
            return 1.0
        s, q, rho = self.pairs[-1]
        return rho / float(np.dot(q, q))

    def push(self, s, q, scale_ref: float = 1.0) -> bool:
        s = np.asarray(s, dtype=float)
        q = np.asarray(q, dtype=float)
        if s.shape != q.shape:
            raise DimensionMismatch(f"s has shape {s.shape}, q has shape {q.shape}")
        if self.pairs and self.pairs[-1][0].shape != s.shape:
            raise DimensionMismatch("pair dimension differs from stored pairs")
        rho = float(np.dot(s, q))
        if not rho > self.eps_curv * float(np.dot(s, s)) * scale_ref:
            return False
        self.pairs.append((s.copy(), q.copy(), rho))
        return True

    def clear(self):
        self.pairs.clear()

    def apply_direction(self, g) -> np.ndarray:
        """``d = -B g`` by the two-loop recursion (``B`` approximates the inverse Hessian)."""
        v = np.array(g, dtype=float)
        if self.pairs and self.pairs[-1][0].shape != v.shape:
            raise DimensionMismatch("gradient dimension differs from stored pairs")
        alphas = []
        for s, q, rho in reversed(self.pairs):
            a = float(np.dot(s, v)) / rho
            v -= a * q
            alphas.append(a)
        v *= self.gamma0
        for (s, q, rho), a in zip(self.pairs, reversed(alphas)):
            b = float(np.dot(q, v)) / rho
            v += (a - b) * s
        return -v


def apply_direction(buf: LbfgsBuffer, g) -> np.ndarray:
    return buf.apply_direction(g)


def push(buf: LbfgsBuffer, s, q, scale_ref: float) -> bool:
    return buf.push(s, q, scale_ref)


def clear(buf: LbfgsBuffer):
    buf.clear()
