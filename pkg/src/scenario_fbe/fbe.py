"""Forward-backward mapping, the forward-backward envelope and its line-search certificate.

For the dual ``min_y fhat(y) + g*(y)`` with ``grad fhat(y) = -Hx(y)`` and a
step ``lam``:

    z_lam(y) = prox_{g/lam}(y/lam + Hx(y))
    R_lam(y) = z_lam(y) - Hx(y)
    T_lam(y) = y - lam R_lam(y) = prox_{lam g*}(y + lam Hx(y))

and the envelope is

    phi_lam(y) = fhat(y) + g*(T) - lam <grad fhat(y), R> + lam/2 ||R||^2
               = fhat(y) - lam/2 ||Hx||^2 + g*(T) + lam/2 ||z||^2.

Since ``x(.)`` is affine, ``x(y + tau d) = x(y) + tau x0(d)`` where ``x0`` is the
homogeneous part. Along a ray the first two terms of the second form are
therefore an explicit quadratic in ``tau`` and only the last two need a prox.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfiniteConjugate
from .oracles import dual_grad, fhat_from_primal, hessian_vec
from .problem import PrimalPoint, ProblemInstance, apply_H
from .prox import SeparableNonsmooth
from .riccati import FactorCache


@dataclass
class FbState:
    """Everything known at a dual point ``y`` for step ``lam``."""

    y: np.ndarray
    lam: float
    x: PrimalPoint
    Hx: np.ndarray
    z: np.ndarray
    T: np.ndarray
    R: np.ndarray
    fhat: float
    gconj: float

    @property
    def phi(self) -> float:
        return fbe_value(self)

    @property
    def grad_fhat(self) -> np.ndarray:
        return -self.Hx


def _nonsmooth_terms(spec: SeparableNonsmooth, v, lam):
    """``(z, T, g*(T))`` for ``v = y + lam Hx``."""
    z, T = spec.moreau_pair(v, lam)
    return z, T, spec.conj(T)


def state_from_primal(prob: ProblemInstance, spec: SeparableNonsmooth, y, lam, x: PrimalPoint,
                      Hx=None, fhat=None) -> FbState:
    """Build the state at ``y`` from a known ``x(y)``; costs one prox, no oracle call."""
    y = np.asarray(y, dtype=float)
    if Hx is None:
        Hx = apply_H(prob, x)
    if fhat is None:
        fhat = fhat_from_primal(prob, y, x, Hx)
    z, T, gc = _nonsmooth_terms(spec, y + lam * Hx, lam)
    return FbState(y=y, lam=float(lam), x=x, Hx=Hx, z=z, T=T, R=z - Hx, fhat=float(fhat), gconj=gc)


def fb_step(cache: FactorCache, prob: ProblemInstance, spec: SeparableNonsmooth | None, y,
            lam: float) -> FbState:
    """Forward-backward step at ``y``: one dual-gradient call and one prox."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    spec = prob.nonsmooth if spec is None else spec
    y = np.asarray(y, dtype=float)
    return state_from_primal(prob, spec, y, lam, dual_grad(cache, prob, y))


def fbe_value(state: FbState) -> float:
    """``phi_lam(y)``; raises :class:`InfiniteConjugate` if ``g*(T)`` is infinite."""
    if not np.isfinite(state.gconj):
        raise InfiniteConjugate("g* is infinite at T_lam(y); decrease lam")
    lam, R = state.lam, state.R
    return float(state.fhat + state.gconj + lam * np.dot(state.Hx, R) + 0.5 * lam * np.dot(R, R))


def fbe_grad(state: FbState, cache: FactorCache, prob: ProblemInstance):
    """``grad phi = R - lam hess(fhat) R = R + lam H x0(R)``; one Hessian-vector call.

    Returns ``(grad, x0(R))``.
    """
    x0 = hessian_vec(cache, prob, state.R)
    return state.R + state.lam * apply_H(prob, x0), x0


class LineSearchCert:
    """Envelope values along ``y + tau d`` at the price of one prox per ``tau``.

    With ``h = Hx(y)`` and ``h0 = Hx0(d)``

        phi(y + tau d) - phi(y) = alpha2 tau^2 + alpha1 tau + alpha0(tau)
        alpha2 = -1/2 <d, h0> - lam/2 ||h0||^2
        alpha1 = -<h, d> - lam <h, h0>
        alpha0(tau) = G(tau) - G(0),  G = g*(T) + lam/2 ||z||^2 at y + tau d.

    Parameters
    ----------
    base : FbState
        State at the base point ``y``.
    d : ndarray
        Direction.
    x0d : PrimalPoint
        Homogeneous response ``x0(d)``.
    """

    def __init__(self, prob: ProblemInstance, spec: SeparableNonsmooth, base: FbState, d,
                 x0d: PrimalPoint, h0=None):
        self.prob = prob
        self.spec = spec
        self.base = base
        self.d = np.asarray(d, dtype=float)
        self.x0d = x0d
        self.h0 = apply_H(prob, x0d) if h0 is None else h0
        lam, h, h0 = base.lam, base.Hx, self.h0
        self.dh0 = float(np.dot(self.d, h0))
        self.alpha2 = -0.5 * self.dh0 - 0.5 * lam * float(np.dot(h0, h0))
        self.alpha1 = -float(np.dot(h, self.d)) - lam * float(np.dot(h, h0))
        self.G0 = base.gconj + 0.5 * lam * float(np.dot(base.z, base.z))
        self.prox_evals = 0
        self._last = None

    @classmethod
    def shifted(cls, prob, spec, state: FbState, a, x0a: PrimalPoint, d, x0d: PrimalPoint):
        """Certificate along ``(y + a) + tau d`` given the state at ``y``.

        The state at the shifted base is assembled from ``x0(a)`` without an
        oracle call; it costs one prox.
        """
        a = np.asarray(a, dtype=float)
        h0a = apply_H(prob, x0a)
        fhat = state.fhat - float(np.dot(state.Hx, a)) - 0.5 * float(np.dot(a, h0a))
        base = state_from_primal(prob, spec, state.y + a, state.lam, state.x + x0a,
                                 Hx=state.Hx + h0a, fhat=fhat)
        cert = cls(prob, spec, base, d, x0d)
        cert.prox_evals = 1
        return cert

    def _G(self, tau):
        b = self.base
        lam = b.lam
        y = b.y + tau * self.d
        Hx = b.Hx + tau * self.h0
        z, T, gc = _nonsmooth_terms(self.spec, y + lam * Hx, lam)
        self.prox_evals += 1
        self._last = (tau, y, Hx, z, T, gc)
        return gc + 0.5 * lam * float(np.dot(z, z))

    def alpha0(self, tau: float) -> float:
        if tau == 0:
            return 0.0
        return self._G(tau) - self.G0

    def value(self, tau: float) -> float:
        """``phi(y + tau d) - phi(y)``."""
        if tau == 0:
            return 0.0
        return self.alpha2 * tau * tau + self.alpha1 * tau + self.alpha0(tau)

    def phi(self, tau: float) -> float:
        """``phi(y + tau d)``."""
        return self.base.phi + self.value(tau)

    def state(self, tau: float) -> FbState:
        """Full state at ``y + tau d``, reusing the prox of the last :meth:`value` call."""
        b = self.base
        if tau == 0:
            return b
        if self._last is None or self._last[0] != tau:
            self._G(tau)
        _, y, Hx, z, T, gc = self._last
        fhat = b.fhat - tau * float(np.dot(b.Hx, self.d)) - 0.5 * tau * tau * self.dh0
        return FbState(y=y, lam=b.lam, x=b.x + tau * self.x0d, Hx=Hx, z=z, T=T, R=z - Hx,
                       fhat=fhat, gconj=gc)


def linesearch_cert(prob, spec, state: FbState, d, x0d: PrimalPoint) -> LineSearchCert:
    return LineSearchCert(prob, spec, state, d, x0d)
