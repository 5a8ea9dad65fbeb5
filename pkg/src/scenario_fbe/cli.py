"""Command-line interface: solve, bench, gen and validate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .bench import run_experiment, spring_mass_suite
from .errors import ProblemFileError, ScenarioFBEError
from .generators import SpringMassParams, gen_random_instance, gen_spring_mass, \
    sample_spring_mass_states
from .solvers import SOLVERS, SolverConfig, Workspace, verify_termination


def _int_tuple(text):
    return tuple(int(v) for v in text.split(",") if v)


def _add_solver_flags(p):
    p.add_argument("--eps", type=float, default=5e-4, help="residual tolerance (inf-norm)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="step size; default 0.95 / largest dual Hessian eigenvalue")
    p.add_argument("--memory", type=int, default=5, help="L-BFGS memory")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--backtracking", choices=("none", "original", "simple"), default="none")
    p.add_argument("--nama-update", choices=("forward_backward", "printed"),
                   default="forward_backward")
    p.add_argument("--precondition", dest="precondition", action="store_true", default=True,
                   help="scale dual blocks by 1/sqrt(probability) (default)")
    p.add_argument("--no-precondition", dest="precondition", action="store_false")


def _config(args, warm):
    return SolverConfig(lam=args.lam, eps=args.eps, memory=args.memory, max_iters=args.max_iters,
                        backtracking_rule=args.backtracking, warm_start_iters=warm,
                        precondition=args.precondition, nama_update=args.nama_update).validate()


def build_parser():
    ap = argparse.ArgumentParser(prog="scenario-fbe",
                                 description="Dual FBE solvers for scenario-tree optimal control.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a problem file")
    p.add_argument("file")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="nama")
    p.add_argument("--warm-start", type=int, default=0, metavar="ITERS",
                   help="accelerated gradient iterations used as warm start")
    p.add_argument("--cache-dir", default=None, help="directory for factor caches")
    p.add_argument("--out", default=None, help="write the JSON report here (default stdout)")
    _add_solver_flags(p)

    p = sub.add_parser("bench", help="run a benchmark suite")
    bsub = p.add_subparsers(dest="suite", required=True)
    b = bsub.add_parser("spring-mass")
    b.add_argument("--samples", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--horizon", type=int, default=8)
    b.add_argument("--masses", type=int, default=5)
    b.add_argument("--solvers", default="minfbe,nama,gpad")
    b.add_argument("--warm-start", type=int, default=0, metavar="ITERS")
    b.add_argument("--no-timing", action="store_true", help="omit wall times (byte-stable CSV)")
    b.add_argument("--out", required=True)
    _add_solver_flags(b)

    p = sub.add_parser("gen", help="generate a problem file")
    gsub = p.add_subparsers(dest="kind", required=True)
    g = gsub.add_parser("random")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", type=_int_tuple, default=(3, 2, 2, 2), help="n_x,n_u,m,m_terminal")
    g.add_argument("--tree-shape", type=_int_tuple, default=(2, 2), help="branching per stage")
    g.add_argument("--kinds", default="box", help="comma list of box,l1,none")
    g.add_argument("--out", required=True)
    g = gsub.add_parser("spring-mass")
    g.add_argument("--masses", type=int, default=5)
    g.add_argument("--horizon", type=int, default=11)
    g.add_argument("--seed", type=int, default=0, help="seed of the sampled initial state")
    g.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="check a problem file")
    p.add_argument("file")
    return ap


def _cmd_solve(args):
    prob = pio.load_problem(args.file)
    problems = prob.validate()
    if problems:
        print("\n".join(problems), file=sys.stderr)
        return 2
    cfg = _config(args, args.warm_start)
    cache = None
    if args.cache_dir:
        from .problem import precondition
        cache = pio.cached_factor(precondition(prob) if cfg.precondition else prob, args.cache_dir)
    ws = Workspace(prob, cfg, cache=cache)
    rep = ws.solve(args.solver)
    chk = verify_termination(prob, rep)
    out = rep.summary()
    out.update(verification={k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                             for k, v in chk.items()},
               residual_trace=[float(v) for v in rep.residual_trace],
               x=rep.x.x.tolist(), u=rep.x.u.tolist(), y=rep.y.tolist(), z=rep.z.tolist())
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(f"{args.solver}: {rep.status}, residual {rep.residual:.3e}, {rep.iterations} iterations, "
          f"{rep.oracle_calls} oracle calls", file=sys.stderr)
    return 0 if rep.converged else 1


def _cmd_bench(args):
    solvers = tuple(s for s in args.solvers.split(",") if s)
    cfg = _config(args, args.warm_start)
    instances, meta = spring_mass_suite(args.samples, args.seed, args.horizon, args.masses)
    rep = run_experiment(instances, solvers, cfg, timing=not args.no_timing, metadata=meta)
    out = rep.write(args.out)
    for s, st in rep.summary["solvers"].items():
        print(f"{s:7s} median calls {st['median_oracle_calls']:.1f}  p84 {st['p84_oracle_calls']:.1f}  "
              f"within {rep.summary['call_budget']}: {100 * st['fraction_within_budget']:.0f}%  "
              f"converged {st['converged']}/{st['instances']}")
    print(f"wrote {out}/results.csv, summary.json, traces.json")
    return 0


def _cmd_gen(args):
    if args.kind == "random":
        kinds = tuple(k for k in args.kinds.split(",") if k)
        prob = gen_random_instance(args.seed, args.dims, args.tree_shape, kinds)
    else:
        params = SpringMassParams(horizon=args.horizon)
        x0 = sample_spring_mass_states(args.masses, 1, args.seed, params)[0]
        prob = gen_spring_mass(args.masses, params, root_state=x0)
    pio.save_problem(prob, args.out)
    print(f"wrote {args.out}: {prob.tree.num_nodes} nodes, dual dimension {prob.dual_dim}")
    return 0


def _cmd_validate(args):
    try:
        prob = pio.load_problem(args.file)
    except (ProblemFileError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    problems = prob.validate()
    if problems:
        print("\n".join(problems))
        return 1
    print(f"ok: {prob.tree.num_nodes} nodes, n_x={prob.n_x}, n_u={prob.n_u}, m={prob.m}, "
          f"m_terminal={prob.m_terminal}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": _cmd_solve, "bench": _cmd_bench, "gen": _cmd_gen,
               "validate": _cmd_validate}[args.command]
    try:
        return handler(args)
    except ProblemFileError as exc:
        print(f"invalid problem file: {exc}", file=sys.stderr)
        return 2
    except ScenarioFBEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
