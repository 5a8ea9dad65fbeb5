"""Dual solvers: MINFBE and NAMA with L-BFGS directions, and accelerated dual proximal gradient.

All solvers work on the dual ``min_y fhat(y) + g*(y)`` and terminate when the
fixed-point residual ``R = z - Hx`` satisfies ``||R / scale||_inf <= eps``,
where ``scale`` is the dual scaling of a preconditioned instance (1 otherwise).
On return the triple ``(x(y), y, z_lam(y))`` satisfies

    ||z - Hx||_inf <= eps,    x minimises <Hx, y> + f(x),
    dist_inf(y, subdiff g(z)) <= lam eps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (InvalidParams, LineSearchStalled, MaxItersExceeded, StepUnderflow)
from .fbe import FbState, LineSearchCert, state_from_primal
from .lbfgs import LbfgsBuffer
from .oracles import dual_grad, estimate_lipschitz, hessian_vec, hessian_vec_batch
from .problem import PrimalPoint, ProblemInstance, apply_H, precondition
from .prox import SeparableNonsmooth
from .riccati import FactorCache, factor

MIN_TAU = 2.0 ** -60
MIN_LAM = 1e-14

__all__ = ["SolverConfig", "SolverReport", "solve_minfbe", "solve_nama", "solve_gpad",
           "backtrack_lambda", "precondition", "warm_start", "verify_termination", "Workspace",
           "solve", "SOLVERS"]


@dataclass
class SolverConfig:
    """Solver parameters.

    ``lam=None`` selects ``lam_factor / L`` with ``L`` the largest eigenvalue of
    the dual Hessian.
    """

    lam: float | None = None
    lam_factor: float = 0.95
    eps: float = 5e-4
    eps_curv: float = 1e-12
    eps_simple: float = 0.25
    beta: float = 0.0
    memory: int = 5
    max_iters: int = 2000
    backtracking_rule: str = "none"
    warm_start_iters: int = 5
    precondition: bool = True
    nama_parallel_linesearch: bool = False
    nama_update: str = "forward_backward"
    lipschitz_method: str = "lanczos"
    on_stall: str = "fallback"

    def validate(self):
        bad = []
        if self.lam is not None and not self.lam > 0:
            bad.append("lam must be positive")
        if not 0 < self.lam_factor <= 1:
            bad.append("lam_factor must be in (0, 1]")
        if not self.eps > 0:
            bad.append("eps must be positive")
        if not self.eps_curv > 0:
            bad.append("eps_curv must be positive")
        if not 0 < self.eps_simple < 0.5:
            bad.append("eps_simple must be in (0, 1/2)")
        if not 0 <= self.beta < 1:
            bad.append("beta must be in [0, 1)")
        if self.memory < 1:
            bad.append("memory must be at least 1")
        if self.max_iters < 0 or self.warm_start_iters < 0:
            bad.append("iteration counts must be nonnegative")
        if self.backtracking_rule not in ("none", "original", "simple"):
            bad.append(f"unknown backtracking rule {self.backtracking_rule!r}")
        if self.nama_update not in ("printed", "forward_backward"):
            bad.append(f"unknown NAMA update {self.nama_update!r}")
        if self.lipschitz_method not in ("lanczos", "power"):
            bad.append(f"unknown Lipschitz estimator {self.lipschitz_method!r}")
        if self.on_stall not in ("fallback", "raise"):
            bad.append(f"unknown stall policy {self.on_stall!r}")
        if bad:
            raise InvalidParams("; ".join(bad))
        return self


@dataclass
class SolverReport:
    """Result of one solver run; ``x, y, z`` form the termination triple."""

    solver: str
    x: PrimalPoint
    y: np.ndarray
    z: np.ndarray
    lam: float
    eps: float
    residual: float
    converged: bool
    iterations: int = 0
    dual_grad_calls: int = 0
    homogeneous_calls: int = 0
    hessian_vec_calls: int = 0
    prox_calls: int = 0
    backtracks: int = 0
    stalls: int = 0
    wall_time: float = 0.0
    residual_trace: list = field(default_factory=list)
    fbe_trace: list = field(default_factory=list)
    lam_trace: list = field(default_factory=list)
    tau_trace: list = field(default_factory=list)
    iterates: list | None = None

    @property
    def oracle_calls(self) -> int:
        """Tree sweeps: dual gradients plus homogeneous and Hessian-vector sweeps."""
        return self.dual_grad_calls + self.homogeneous_calls + self.hessian_vec_calls

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iters"

    def raise_for_status(self):
        if not self.converged:
            raise MaxItersExceeded(f"{self.solver}: residual {self.residual:.3g} > {self.eps:g} "
                                   f"after {self.iterations} iterations")
        return self

    def summary(self) -> dict:
        return {"solver": self.solver, "converged": self.converged,
                "iterations": self.iterations, "dual_grad_calls": self.dual_grad_calls,
                "homogeneous_calls": self.homogeneous_calls,
                "hessian_vec_calls": self.hessian_vec_calls, "prox_calls": self.prox_calls,
                "oracle_calls": self.oracle_calls, "final_residual_inf": self.residual,
                "lam": self.lam, "eps": self.eps, "backtracks": self.backtracks,
                "stalls": self.stalls, "wall_ms": 1000 * self.wall_time}


class _Run:
    """Oracle access with call counting and trace bookkeeping for one solver run."""

    def __init__(self, name, prob, cache, spec, cfg, y0, keep_iterates=False):
        cfg.validate()
        self.name = name
        self.prob = prob
        self.cache = cache
        self.spec = prob.nonsmooth if spec is None else spec
        self.cfg = cfg
        self.lam = resolve_lambda(prob, cache, cfg)
        self.scale = prob.dual_scale
        self.y0 = np.zeros(prob.dual_dim) if y0 is None else np.array(y0, dtype=float)
        self.report = SolverReport(solver=name, x=None, y=None, z=None, lam=self.lam, eps=cfg.eps,
                                   residual=np.inf, converged=False,
                                   iterates=[] if keep_iterates else None)
        self.t0 = time.perf_counter()

    # oracle wrappers
    def fb(self, y) -> FbState:
        self.report.dual_grad_calls += 1
        self.report.prox_calls += 1
        return state_from_primal(self.prob, self.spec, y, self.lam, dual_grad(self.cache, self.prob, y))

    def restate(self, st: FbState) -> FbState:
        self.report.prox_calls += 1
        return state_from_primal(self.prob, self.spec, st.y, self.lam, st.x, Hx=st.Hx, fhat=st.fhat)

    def hv(self, r, kind="homogeneous") -> PrimalPoint:
        if kind == "hessian":
            self.report.hessian_vec_calls += 1
        else:
            self.report.homogeneous_calls += 1
        return hessian_vec(self.cache, self.prob, r)

    def hv_batch(self, rs):
        self.report.homogeneous_calls += len(rs)
        return hessian_vec_batch(self.cache, self.prob, np.stack(rs))

    def grad(self, st: FbState):
        return st.R + st.lam * apply_H(self.prob, self.hv(st.R, "hessian"))

    def residual(self, st: FbState) -> float:
        R = st.R if self.scale is None else st.R / self.scale
        return float(np.abs(R).max(initial=0.0))

    def record(self, st: FbState, res, phi=None):
        rep = self.report
        rep.residual_trace.append(res)
        rep.lam_trace.append(st.lam)
        if phi is not None:
            rep.fbe_trace.append(phi)
        if rep.iterates is not None:
            rep.iterates.append(st.y.copy())

    def finish(self, st: FbState, res, converged) -> SolverReport:
        rep = self.report
        rep.x, rep.y, rep.z = st.x, st.y, st.z
        rep.lam = st.lam
        rep.residual = res
        rep.converged = bool(converged)
        rep.wall_time = time.perf_counter() - self.t0
        return rep

    def line_search(self, cert: LineSearchCert, phi_ref: float):
        """Largest ``tau = 2^-k`` with ``phi(base + tau d) <= phi_ref``."""
        tau = 1.0
        try:
            while True:
                if cert.phi(tau) <= phi_ref:
                    break
                tau *= 0.5
                if tau < MIN_TAU:
                    raise LineSearchStalled(f"{self.name}: no decrease for tau >= 2^-60")
        except LineSearchStalled:
            if self.cfg.on_stall == "raise":
                raise
            self.report.stalls += 1
            tau = 0.0
        self.report.prox_calls += cert.prox_evals
        cert.prox_evals = 0
        self.report.tau_trace.append(tau)
        return tau


def resolve_lambda(prob, cache, cfg: SolverConfig) -> float:
    if cfg.lam is not None:
        return float(cfg.lam)
    L = estimate_lipschitz(cache, prob, method=cfg.lipschitz_method)
    return cfg.lam_factor / L if L > 0 else 1.0


def backtrack_lambda(anchor: FbState, new: FbState, rule: str, cfg: SolverConfig,
                     buf: LbfgsBuffer | None = None):
    """Halve ``lam`` if the step ``anchor.y -> new.y`` violates the chosen rule.

    ``original``: ``fhat(new) > fhat(a) - <Hx(a), delta> + (1 - beta)/(2 lam) ||delta||^2``.
    ``simple``: ``lam ||Hx(new) - Hx(a)|| > eps_simple ||delta||``.
    On halving the L-BFGS buffer is emptied. Returns ``(lam, halved)``.
    """
    lam = anchor.lam
    if rule == "none":
        return lam, False
    delta = new.y - anchor.y
    dd = float(np.dot(delta, delta))
    if rule == "original":
        model = anchor.fhat - float(np.dot(anchor.Hx, delta)) + (1 - cfg.beta) / (2 * lam) * dd
        halve = new.fhat > model + 1e-12 * max(1.0, abs(model))
    elif rule == "simple":
        halve = lam * np.linalg.norm(new.Hx - anchor.Hx) > cfg.eps_simple * np.sqrt(dd)
    else:
        raise InvalidParams(f"unknown backtracking rule {rule!r}")
    if not halve:
        return lam, False
    lam *= 0.5
    if lam < MIN_LAM:
        raise StepUnderflow(f"lam fell below {MIN_LAM:g}")
    if buf is not None:
        buf.clear()
    return lam, True


def _apply_backtracking(run: _Run, anchor: FbState, new: FbState, buf: LbfgsBuffer):
    lam, halved = backtrack_lambda(anchor, new, run.cfg.backtracking_rule, run.cfg, buf)
    if halved:
        run.lam = lam
        run.report.backtracks += 1
        new = run.restate(new)
    return new, halved


def solve_minfbe(prob: ProblemInstance, cache: FactorCache, spec: SeparableNonsmooth | None = None,
                 cfg: SolverConfig | None = None, y0=None, keep_iterates=False) -> SolverReport:
    """Minimise the forward-backward envelope with L-BFGS directions.

    Each iteration costs one dual gradient, one Hessian-vector product for
    the envelope gradient and one homogeneous sweep for the line search.
    """
    cfg = cfg or SolverConfig()
    run = _Run("minfbe", prob, cache, spec, cfg, y0, keep_iterates)
    buf = LbfgsBuffer(cfg.memory, cfg.eps_curv)
    st = run.fb(run.y0)
    res = run.residual(st)
    run.record(st, res, st.phi)
    if res <= cfg.eps:
        return run.finish(st, res, True)
    g = run.grad(st)
    for k in range(cfg.max_iters):
        d = buf.apply_direction(g)
        cert = LineSearchCert(prob, run.spec, st, d, run.hv(d))
        tau = run.line_search(cert, st.phi)
        w = cert.state(tau)
        new = run.fb(w.T)
        new, halved = _apply_backtracking(run, w, new, buf)
        run.report.iterations = k + 1
        res = run.residual(new)
        run.record(new, res, new.phi)
        if res <= cfg.eps:
            return run.finish(new, res, True)
        g_new = run.grad(new)
        if not halved:
            buf.push(new.y - st.y, g_new - g, float(np.dot(g, g)))
        st, g = new, g_new
    return run.finish(st, res, False)


def solve_nama(prob: ProblemInstance, cache: FactorCache, spec: SeparableNonsmooth | None = None,
               cfg: SolverConfig | None = None, y0=None, keep_iterates=False) -> SolverReport:
    """Newton-type alternating minimisation on the dual with L-BFGS directions.

    The line search runs along ``w = ytilde + tau dtilde``. With
    ``nama_update="forward_backward"`` the ray starts at the forward-backward
    point ``ytilde = T(y)`` and the update is ``y+ = T(w)``. With
    ``nama_update="printed"`` the ray starts at ``ytilde = y + r`` and the update
    is ``y+ = y - lam R(w)``. The two homogeneous responses ``x0(r)`` and ``x0(d)``
    are computed in one batched sweep when ``nama_parallel_linesearch`` is set.
    No Hessian-vector product of the envelope is needed.
    """
    cfg = cfg or SolverConfig()
    name = "pnama" if cfg.nama_parallel_linesearch else "nama"
    run = _Run(name, prob, cache, spec, cfg, y0, keep_iterates)
    buf = LbfgsBuffer(cfg.memory, cfg.eps_curv)
    printed = cfg.nama_update == "printed"
    st = run.fb(run.y0)
    res = run.residual(st)
    run.record(st, res, st.phi)
    if res <= cfg.eps:
        return run.finish(st, res, True)
    for k in range(cfg.max_iters):
        r = st.R
        d = buf.apply_direction(r)
        if cfg.nama_parallel_linesearch:
            x0r, x0d = run.hv_batch([r, d])
        else:
            x0r, x0d = run.hv(r), run.hv(d)
        c = 1.0 if printed else -st.lam
        cert = LineSearchCert.shifted(prob, run.spec, st, c * r, c * x0r, d - c * r, x0d - c * x0r)
        tau = run.line_search(cert, st.phi)
        w = cert.state(tau)
        if printed:
            new, anchor = run.fb(st.y - st.lam * w.R), st
        else:
            new, anchor = run.fb(w.T), w
        new, halved = _apply_backtracking(run, anchor, new, buf)
        run.report.iterations = k + 1
        res = run.residual(new)
        run.record(new, res, new.phi)
        if res <= cfg.eps:
            return run.finish(new, res, True)
        if not halved:
            buf.push(new.y - st.y, new.R - r, float(np.dot(r, r)))
        st = new
    return run.finish(st, res, False)


def solve_gpad(prob: ProblemInstance, cache: FactorCache, spec: SeparableNonsmooth | None = None,
               cfg: SolverConfig | None = None, y0=None, keep_iterates=False) -> SolverReport:
    """Accelerated proximal gradient on the dual (Nesterov sequence, no restart).

    One dual gradient per iteration, evaluated at the extrapolated point ``w``;
    the termination triple is the one at ``w``.
    """
    cfg = cfg or SolverConfig()
    run = _Run("gpad", prob, cache, spec, cfg, y0, keep_iterates)
    y_prev = run.y0
    w = run.y0
    theta = 1.0
    for k in range(cfg.max_iters + 1):
        st = run.fb(w)
        res = run.residual(st)
        run.record(st, res)
        run.report.iterations = k
        if res <= cfg.eps:
            return run.finish(st, res, True)
        if k == cfg.max_iters:
            break
        y_new = st.T
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
        w = y_new + ((theta - 1) / theta_new) * (y_new - y_prev)
        y_prev, theta = y_new, theta_new
    return run.finish(st, res, False)


def warm_start(prob: ProblemInstance, cache: FactorCache, spec: SeparableNonsmooth | None = None,
               cfg: SolverConfig | None = None, return_report=False):
    """Dual point after ``cfg.warm_start_iters`` accelerated gradient steps from zero."""
    cfg = cfg or SolverConfig()
    n = cfg.warm_start_iters
    if n == 0:
        y = np.zeros(prob.dual_dim)
        return (y, None) if return_report else y
    run = _Run("warm_start", prob, cache, spec, cfg, None)
    y_prev = w = run.y0
    theta = 1.0
    for k in range(n):
        st = run.fb(w)
        y_new = st.T
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
        w = y_new + ((theta - 1) / theta_new) * (y_new - y_prev)
        y_prev, theta = y_new, theta_new
    run.report.iterations = n
    rep = run.finish(st, run.residual(st), False)
    return (y_prev, rep) if return_report else y_prev


SOLVERS = {"minfbe": solve_minfbe, "nama": solve_nama, "pnama": solve_nama, "gpad": solve_gpad}


def verify_termination(prob: ProblemInstance, report: SolverReport, eps: float | None = None,
                       lam: float | None = None, cache: FactorCache | None = None) -> dict:
    """Re-check the termination triple of ``report`` from scratch.

    Checks ``||z - Hx||_inf <= eps``, ``dist_inf(y, subdiff g(z)) <= lam eps`` and
    primal feasibility of ``x``; with ``cache`` also that ``x = x(y)``.
    """
    eps = report.eps if eps is None else eps
    lam = report.lam if lam is None else lam
    Hx = apply_H(prob, report.x)
    primal = float(np.abs(report.z - Hx).max(initial=0.0))
    dual = prob.nonsmooth.subdiff_dist(report.y, report.z)
    dyn = prob.dynamics_residual(report.x)
    tol = 1e-9 * max(1.0, float(np.abs(report.x.x).max()))
    out = {"primal_residual": primal, "dual_distance": dual, "dynamics_residual": dyn,
           "primal_ok": primal <= eps * (1 + 1e-9), "dual_ok": dual <= lam * eps * (1 + 1e-9),
           "dynamics_ok": dyn <= tol}
    if cache is not None:
        xy = dual_grad(cache, prob, report.y)
        err = max(float(np.abs(xy.x - report.x.x).max()), float(np.abs(xy.u - report.x.u).max(initial=0)))
        out["stationarity_error"] = err
        out["stationarity_ok"] = err <= 1e-7 * max(1.0, float(np.abs(xy.x).max()))
    out["ok"] = all(v for k, v in out.items() if k.endswith("_ok"))
    return out


class Workspace:
    """Factorisation, step size and scaling shared by many solves of one problem family.

    Only the root state may change between solves; everything else is
    computed once.
    """

    def __init__(self, prob: ProblemInstance, cfg: SolverConfig | None = None,
                 cache: FactorCache | None = None, lipschitz: float | None = None):
        self.cfg = (cfg or SolverConfig()).validate()
        self.original = prob
        self.prob = precondition(prob) if self.cfg.precondition else prob
        self.cache = cache if cache is not None and cache.matches(self.prob) else factor(self.prob)
        self._lipschitz = lipschitz

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            self._lipschitz = estimate_lipschitz(self.cache, self.prob, method=self.cfg.lipschitz_method)
        return self._lipschitz

    @property
    def lam(self) -> float:
        if self.cfg.lam is not None:
            return self.cfg.lam
        return self.cfg.lam_factor / self.lipschitz if self.lipschitz > 0 else 1.0

    def solve(self, solver: str = "nama", root_state=None, y0=None, cfg: SolverConfig | None = None,
              keep_iterates=False) -> SolverReport:
        """Run ``solver`` and return a report in the variables of the original problem."""
        if solver not in SOLVERS:
            raise InvalidParams(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}")
        cfg = replace(cfg or self.cfg, lam=self.lam)
        if solver == "pnama":
            cfg = replace(cfg, nama_parallel_linesearch=True)
        elif solver == "nama":
            cfg = replace(cfg, nama_parallel_linesearch=False)
        prob = self.prob if root_state is None else self.prob.with_root_state(root_state)
        warm = None
        if y0 is None and cfg.warm_start_iters > 0:
            y0, warm = warm_start(prob, self.cache, None, cfg, return_report=True)
        elif y0 is not None and prob.dual_scale is not None:
            y0 = np.asarray(y0, dtype=float) / prob.dual_scale
        rep = SOLVERS[solver](prob, self.cache, None, cfg, y0, keep_iterates)
        if warm is not None:
            rep.dual_grad_calls += warm.dual_grad_calls
            rep.prox_calls += warm.prox_calls
        if prob.dual_scale is not None:
            rep.y = rep.y * prob.dual_scale
            rep.z = rep.z / prob.dual_scale
            if rep.iterates is not None:
                rep.iterates = [v * prob.dual_scale for v in rep.iterates]
        return rep


def solve(prob: ProblemInstance, solver: str = "nama", cfg: SolverConfig | None = None,
          y0=None) -> SolverReport:
    """One-shot solve: optional preconditioning, factor step, step size, warm start."""
    return Workspace(prob, cfg).solve(solver, y0=y0)
