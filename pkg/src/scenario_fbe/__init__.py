"""Dual forward-backward-envelope solvers for scenario-tree stochastic optimal control."""

from .errors import *  # noqa: F401,F403
from .fbe import FbState, LineSearchCert, fb_step, fbe_grad, fbe_value, linesearch_cert
from .generators import SpringMassParams, gen_random_instance, gen_spring_mass, \
    sample_spring_mass_states
from .lbfgs import LbfgsBuffer
from .oracles import (dual_grad, estimate_lipschitz, fhat_value, grad_fhat, hessian_vec,
                      hessian_vec_batch)
from .problem import PrimalPoint, ProblemInstance, apply_H, apply_H_adjoint, eval_f, precondition
from .prox import Box, CustomBlock, NoPenalty, ScaledL1, SeparableNonsmooth, conj_value_g, \
    prox_g, prox_g_conj
from .riccati import FactorCache, factor, refactor_affine
from .solvers import (SolverConfig, SolverReport, Workspace, backtrack_lambda, solve, solve_gpad,
                      solve_minfbe, solve_nama, verify_termination, warm_start)
from .tree import ScenarioTree, build_from_markov

__version__ = "0.1.0"
