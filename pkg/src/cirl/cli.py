"""Command-line interface: ``cirl <subcommand> ...``.

Exit status is 0 on success, 1 on invalid input and 2 when a solver fails
to converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import io
from .cmdp import Regularizer, to_grid
from .experiments import (FINITE_SAMPLE_METHODS, GENERALIZATION_METHODS,
                          run_finite_sample_experiment, run_generalization_experiment)
from .forward import NonConvergenceError, frank_wolfe_solve, soft_value_iteration, solve_rl_constrained
from .gridworld import GridworldConfig, build_gridworld, features_r1, features_r2
from .identifiability import identify
from .irl import DivergenceError, GdaConfig, estimate_occupancy, gda_irl, sample_size
from .numerics import IterationLimitError

log = logging.getLogger("cirl")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _parse_overrides(items, cls):
    """``key=value`` pairs for dataclass ``cls``; values are parsed as JSON when possible."""
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise io.ValidationError(f"override {item!r} is not of the form key=value")
        if key not in names:
            raise io.ValidationError(f"unknown setting {key!r} (known: {', '.join(sorted(names))})")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _gridworld_config(args):
    try:
        return GridworldConfig.from_dict(_parse_overrides(args.overrides, GridworldConfig))
    except (TypeError, ValueError) as exc:
        raise io.ValidationError(f"invalid gridworld setting: {exc}") from None


def _emit(args, payload, human):
    if getattr(args, "output", None):
        io.write_json(args.output, payload)
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def cmd_solve(args):
    cmdp = io.load_cmdp(args.env)
    r = io.load_reward(args.reward, cmdp.n, cmdp.m) if args.reward else cmdp.reward
    if r is None:
        raise io.ValidationError("no reward: pass --reward or include 'r' in the CMDP file")
    if args.reg == "quadratic":
        res = frank_wolfe_solve(cmdp, r, Regularizer.quadratic(args.beta), iters=args.iters)
        payload = {"occupancy": to_grid(res.occupancy, cmdp.n, cmdp.m).tolist(),
                   "gap": res.gap, "iterations": res.iterations}
        mu = res.occupancy
    elif cmdp.k:
        sol = solve_rl_constrained(cmdp, r, args.beta, tol=args.tol, max_iter=args.max_iter or 10_000)
        payload = io.constrained_solution_to_dict(sol, cmdp.n, cmdp.m)
        mu = sol.occupancy
    else:
        sol = soft_value_iteration(cmdp, r, args.beta, tol=args.tol, max_iter=args.max_iter or 100_000)
        if not sol.converged:
            raise NonConvergenceError("soft value iteration did not converge")
        payload = io.soft_solution_to_dict(sol, cmdp.n, cmdp.m)
        mu = sol.occupancy
    _emit(args, payload, "occupancy " + np.array2string(mu, precision=6))
    return EXIT_OK


def cmd_irl(args):
    cmdp = io.load_cmdp(args.env)
    rc = io.load_features(args.features, cmdp.n, cmdp.m)
    if args.demos:
        mu_e = estimate_occupancy(io.load_demos(args.demos), cmdp.gamma, cmdp.n, cmdp.m)
    elif args.mu:
        mu_e = io.load_occupancy(args.mu, cmdp.n, cmdp.m)
    else:
        raise io.ValidationError("pass --demos or --mu")
    if args.unconstrained:
        cmdp = cmdp.without_constraints()
    settings = {"episodes": args.episodes, "beta": args.beta, "seed": args.seed}
    if args.eta is not None:
        settings["eta"] = args.eta
    settings.update(_parse_overrides(args.overrides, GdaConfig))
    res = gda_irl(cmdp, rc, mu_e, GdaConfig(**settings))
    payload = {"weights": res.weights.tolist(), "dual": res.dual.tolist(),
               "final_ipm": res.trace[-1].ipm if res.trace else None}
    if args.output:
        io.save_irl_result(args.output, res, cmdp.n, cmdp.m)
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"weights {np.array2string(res.weights, precision=6)}")
        print(f"dual {np.array2string(res.dual, precision=6)}")
    return EXIT_OK


def cmd_identify(args):
    cmdp = io.load_cmdp(args.env)
    rc = io.load_features(args.features, cmdp.n, cmdp.m)
    mu = io.load_occupancy(args.mu, cmdp.n, cmdp.m) if args.mu else None
    r = io.load_reward(args.reward, cmdp.n, cmdp.m) if args.reward else None
    report = identify(cmdp, rc, mu, r, Regularizer.entropy(args.beta))
    payload = report.to_dict()
    human = (f"rank Phi={report.rank_phi} rank Xi={report.rank_xi} rank joint={report.rank_joint} "
             f"condition_met={str(report.condition_met).lower()}")
    _emit(args, payload, human)
    return EXIT_OK


def cmd_gridworld_gen(args):
    cfg = _gridworld_config(args)
    cmdp = build_gridworld(cfg, test=args.test)
    io.write_json(args.output, io.cmdp_to_dict(cmdp))
    written = [args.output]
    if args.features_dir:
        os.makedirs(args.features_dir, exist_ok=True)
        for name, phi in (("R1", features_r1(cfg)), ("R2", features_r2(cfg))):
            path = os.path.join(args.features_dir, f"{name}.json")
            io.write_json(path, io.features_to_dict(phi, cmdp.n, cmdp.m, "l1", args.radius))
            written.append(path)
    payload = {"written": written, "n": cmdp.n, "m": cmdp.m, "k": cmdp.k}
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print("wrote " + " ".join(written))
    return EXIT_OK


def _methods(raw, known):
    if not raw:
        return known
    methods = tuple(m.strip() for m in raw.split(",") if m.strip())
    bad = [m for m in methods if m not in known]
    if bad:
        raise io.ValidationError(f"unknown methods {bad}; choose from {', '.join(known)}")
    return methods


def _report_output(args, report, human_rows):
    if args.json:
        print(json.dumps({"rows": report.rows, "errors": report.errors}, sort_keys=True))
    else:
        for line in human_rows:
            print(line)
        for method, err in sorted(report.errors.items()):
            print(f"{method}: FAILED {err}")
    return EXIT_NONCONVERGED if report.errors else EXIT_OK


def cmd_generalization(args):
    cfg = _gridworld_config(args)
    gda = GdaConfig(episodes=args.episodes, beta=cfg.beta, seed=args.seed,
                    record_every=max(1, args.episodes // 100), eta=args.eta)
    report = run_generalization_experiment(cfg, args.out, methods=_methods(args.methods, GENERALIZATION_METHODS),
                                           radius=args.radius, gda=gda, jobs=args.jobs)
    rows = [f"{r['method']:6s} {r['b_regime']:5s} dmu={r['delta_mu']:.3e} dJ={r['delta_j']:.3e}" for r in report.rows]
    return _report_output(args, report, rows)


def cmd_finite_sample(args):
    cfg = _gridworld_config(args)
    try:
        counts = [int(c) for c in args.counts.split(",")]
    except ValueError:
        raise io.ValidationError(f"--counts must be comma-separated integers, got {args.counts!r}") from None
    gda = GdaConfig(episodes=args.episodes, beta=cfg.beta, seed=args.seed,
                    record_every=max(1, args.episodes // 10), eta=args.eta)
    report = run_finite_sample_experiment(cfg, counts, args.horizon, args.seeds, args.out,
                                          methods=_methods(args.methods, FINITE_SAMPLE_METHODS),
                                          base_seed=args.seed, gda=gda, jobs=args.jobs)
    rows = [f"N={r['N']:<6d} {r['method']:8s} q={r['quantile']:.1f} policy={r['policy_error']:.4f} "
            f"reward={r['reward_error']:.4f}" for r in report.rows]
    return _report_output(args, report, rows)


def cmd_sample_size(args):
    N, T = sample_size(args.eps, args.delta, args.R, args.d, args.gamma)
    if args.json:
        print(json.dumps({"N": N, "T": T}))
    else:
        print(f"N={N} T={T}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--beta", type=float, default=1.0)
    common.add_argument("--episodes", type=int, default=None)
    common.add_argument("overrides", nargs="*", metavar="key=value", help="configuration overrides")

    p = _Parser(prog="cirl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve a (constrained) regularized MDP")
    s.add_argument("--env", required=True)
    s.add_argument("--reward")
    s.add_argument("--reg", choices=("entropy", "quadratic"), default="entropy")
    s.add_argument("--iters", type=int, default=10_000, help="Frank-Wolfe iterations (quadratic)")
    s.add_argument("--max-iter", type=int, help="iteration cap of the entropy solvers")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("irl", parents=[common], help="recover a reward by gradient descent-ascent")
    s.add_argument("--env", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--demos")
    s.add_argument("--mu")
    s.add_argument("--eta", type=float)
    s.add_argument("--unconstrained", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_irl, default_episodes=20_000)

    s = sub.add_parser("identify", parents=[common], help="rank condition and cone membership")
    s.add_argument("--env", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--mu")
    s.add_argument("--reward")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("gridworld-gen", parents=[common], help="write the gridworld CMDP (and feature files)")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--features-dir")
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--test", action="store_true", help="use the test thresholds")
    s.set_defaults(func=cmd_gridworld_gen)

    s = sub.add_parser("experiment-generalization", parents=[common], help="generalization study")
    s.add_argument("--out", required=True)
    s.add_argument("--methods")
    s.add_argument("--radius", type=float, default=10.0)
    s.add_argument("--eta", type=float)
    s.set_defaults(func=cmd_generalization, default_episodes=200_000)

    s = sub.add_parser("experiment-finite-sample", parents=[common], help="finite-sample study")
    s.add_argument("--out", required=True)
    s.add_argument("--counts", default="10,100,1000")
    s.add_argument("--horizon", type=int, default=1000)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--methods")
    s.add_argument("--eta", type=float)
    s.set_defaults(func=cmd_finite_sample, default_episodes=10_000)

    s = sub.add_parser("sample-size", parents=[common], help="trajectory count and horizon")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--R", type=float, default=1.0)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.set_defaults(func=cmd_sample_size)
    return p


def _configure_logging():
    level = os.environ.get("CIRL_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.episodes is None:
        args.episodes = getattr(args, "default_episodes", 20_000)
    try:
        return args.func(args)
    except (NonConvergenceError, DivergenceError, IterationLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
