"""Proximal maps and conjugates of the separable nonsmooth term g.

``g(z) = sum_i pi^i * gbar^i(z^i)`` where each block ``gbar^i`` is one of

* :class:`Box` -- indicator of ``{lower <= z <= upper}`` (infinite bounds allowed),
* :class:`ScaledL1` -- ``gamma * ||z||_1``,
* :class:`NoPenalty` -- identically zero,

or a user subclass of :class:`CustomBlock`. Built-in blocks are compiled into
per-component arrays so that every operation is a single vectorised pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedSpec

_CONJ_RTOL = 1e-12
_BOUND_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))


@dataclass(frozen=True)
class ScaledL1:
    gamma: float


@dataclass(frozen=True)
class NoPenalty:
    pass


class CustomBlock:
    """Extension point for other proximable blocks.

    Subclasses implement the four methods below for a single block; ``weight``
    is the probability multiplier of the block.
    """

    def prox(self, v, gamma, weight):  # prox of gamma*weight*gbar
        raise NotImplementedError

    def prox_conj(self, v, lam, weight):  # prox of lam*(weight*gbar)^*
        return v - lam * self.prox(v / lam, 1.0 / lam, weight)

    def conj(self, w, weight):
        raise NotImplementedError

    def subdiff_dist(self, y, z, weight):
        raise NotImplementedError


def _spec_size(spec, size):
    if isinstance(spec, Box) and spec.lower.size != size:
        raise UnsupportedSpec(f"box of size {spec.lower.size} on a block of size {size}")
    return size


class SeparableNonsmooth:
    """Compiled block-separable function over a dual vector of length ``m``.

    Parameters
    ----------
    blocks : sequence of (spec, weight, size)
        Blocks in dual-vector order.
    """

    def __init__(self, blocks):
        lower, upper, l1w, custom = [], [], [], []
        offset = 0
        for spec, weight, size in blocks:
            if weight <= 0:
                raise ValueError("block weights must be positive")
            _spec_size(spec, size)
            if isinstance(spec, Box):
                lower.append(spec.lower)
                upper.append(spec.upper)
                l1w.append(np.full(size, np.nan))
            elif isinstance(spec, NoPenalty):
                lower.append(np.full(size, -np.inf))
                upper.append(np.full(size, np.inf))
                l1w.append(np.full(size, np.nan))
            elif isinstance(spec, ScaledL1):
                if spec.gamma < 0:
                    raise UnsupportedSpec("l1 weight must be nonnegative")
                lower.append(np.full(size, -np.inf))
                upper.append(np.full(size, np.inf))
                l1w.append(np.full(size, weight * spec.gamma))
            elif isinstance(spec, CustomBlock):
                lower.append(np.full(size, -np.inf))
                upper.append(np.full(size, np.inf))
                l1w.append(np.full(size, np.nan))
                custom.append((slice(offset, offset + size), spec, weight))
            else:
                raise UnsupportedSpec(f"unsupported block spec {spec!r}")
            offset += size
        cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0))
        self.size = offset
        self.lower = cat(lower)
        self.upper = cat(upper)
        self.l1_weight = cat(l1w)
        self.is_l1 = ~np.isnan(self.l1_weight)
        self._l1w = np.where(self.is_l1, self.l1_weight, 0.0)
        self.custom = custom
        self._plain = np.ones(self.size, dtype=bool)
        for sl, _, _ in custom:
            self._plain[sl] = False

    # -- proximal maps --------------------------------------------------------------
    def prox(self, v, gamma):
        """``prox_{gamma g}(v)``: clamp on box blocks, soft-threshold on l1 blocks."""
        if gamma <= 0:
            raise ValueError("prox parameter must be positive")
        z = np.clip(v, self.lower, self.upper)
        if self.is_l1.any():
            thr = gamma * self._l1w
            soft = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
            z = np.where(self.is_l1, soft, z)
        for sl, spec, w in self.custom:
            z[..., sl] = spec.prox(v[..., sl], gamma, w)
        return z

    def prox_conj(self, v, lam):
        """``prox_{lam g*}(v)`` computed in closed form per block.

        Components strictly inside the scaled box map to exactly zero.
        """
        if lam <= 0:
            raise ValueError("prox parameter must be positive")
        t = v - np.clip(v, lam * self.lower, lam * self.upper)
        if self.is_l1.any():
            t = np.where(self.is_l1, np.clip(v, -self._l1w, self._l1w), t)
        for sl, spec, w in self.custom:
            t[..., sl] = spec.prox_conj(v[..., sl], lam, w)
        return t

    def moreau_pair(self, v, lam):
        """Both halves of the Moreau decomposition of ``v``.

        Returns ``(z, t)`` with ``z = prox_{g/lam}(v/lam)`` and
        ``t = prox_{lam g*}(v)``, so that ``t + lam*z == v`` up to rounding.
        """
        return self.prox(v / lam, 1.0 / lam), self.prox_conj(v, lam)

    # -- values ---------------------------------------------------------------------
    def conj(self, w) -> float:
        """``g*(w)``; ``+inf`` outside the domain."""
        w = np.asarray(w, dtype=float)
        plain = self._plain & ~self.is_l1
        wp = w[plain]
        lo, hi = self.lower[plain], self.upper[plain]
        pos, neg = wp > 0, wp < 0
        if np.any(np.isinf(hi[pos])) or np.any(np.isinf(lo[neg])):
            return np.inf
        total = float(np.dot(hi[pos], wp[pos]) + np.dot(lo[neg], wp[neg]))
        if self.is_l1.any():
            cap = self._l1w[self.is_l1]
            if np.any(np.abs(w[self.is_l1]) > cap * (1 + _CONJ_RTOL) + 1e-300):
                return np.inf
        for sl, spec, wt in self.custom:
            total += spec.conj(w[sl], wt)
        return total

    def value(self, z) -> float:
        """``g(z)``; ``+inf`` if a box constraint is violated."""
        z = np.asarray(z, dtype=float)
        plain = self._plain & ~self.is_l1
        if np.any(z[plain] < self.lower[plain]) or np.any(z[plain] > self.upper[plain]):
            return np.inf
        total = float(np.dot(self._l1w, np.abs(z)))
        for sl, spec, wt in self.custom:
            if not hasattr(spec, "value"):
                raise UnsupportedSpec(f"{type(spec).__name__} has no value()")
            total += spec.value(z[sl], wt)
        return total

    def subdiff_dist(self, y, z) -> float:
        """Infinity-norm distance from ``y`` to the subdifferential of g at ``z``."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        plain = self._plain & ~self.is_l1
        lo, hi, yp, zp = self.lower[plain], self.upper[plain], y[plain], z[plain]
        if np.any(zp < lo - _BOUND_RTOL * np.maximum(1, np.abs(lo))) or \
                np.any(zp > hi + _BOUND_RTOL * np.maximum(1, np.abs(hi))):
            return np.inf
        at_hi = np.abs(zp - hi) <= _BOUND_RTOL * np.maximum(1, np.abs(hi))
        at_lo = np.abs(zp - lo) <= _BOUND_RTOL * np.maximum(1, np.abs(lo))
        d = np.abs(yp)
        d = np.where(at_hi, np.maximum(-yp, 0.0), d)
        d = np.where(at_lo, np.maximum(yp, 0.0), d)
        d = np.where(at_hi & at_lo, 0.0, d)
        dist = float(d.max()) if d.size else 0.0
        if self.is_l1.any():
            wl, yl, zl = self._l1w[self.is_l1], y[self.is_l1], z[self.is_l1]
            dl = np.where(zl != 0, np.abs(yl - wl * np.sign(zl)), np.maximum(np.abs(yl) - wl, 0.0))
            dist = max(dist, float(dl.max()))
        for sl, spec, wt in self.custom:
            dist = max(dist, spec.subdiff_dist(y[sl], z[sl], wt))
        return dist


# Functional aliases.

def prox_g(spec: SeparableNonsmooth, v, gamma):
    return spec.prox(v, gamma)


def conj_value_g(spec: SeparableNonsmooth, w) -> float:
    return spec.conj(w)


def prox_g_conj(spec: SeparableNonsmooth, v, lam):
    return spec.prox_conj(v, lam)
