"""Gridworld experiment harnesses: generalization of learned rewards and finite-sample learning."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cmdp import Regularizer, objective, state_marginal
from .forward import (InfeasibleError, NonConvergenceError, SlaterViolationError,
                      solve_rl_constrained)
from .gridworld import (GridworldConfig, build_gridworld, features_r1, features_r2,
                        sample_demonstrations)
from .identifiability import potential_shaping_distance
from .irl import (DivergenceError, GdaConfig, RewardClass, estimate_occupancy, gda_irl,
                  sample_size)
from .numerics import IterationLimitError

log = logging.getLogger(__name__)

GENERALIZATION_METHODS = ("R1-F", "R2-F", "R1-M", "R2-M")
FINITE_SAMPLE_METHODS = ("R2-l1-F", "R2-l1-M", "R2-l2-F", "R2-l2-M")
QUANTILES = (0.1, 0.5, 0.9)

# failures that are reported per method instead of aborting a whole study
_SOLVER_ERRORS = (NonConvergenceError, DivergenceError, SlaterViolationError, InfeasibleError,
                  IterationLimitError, np.linalg.LinAlgError)


@dataclass
class ExperimentReport:
    rows: list
    metadata: dict
    errors: dict = field(default_factory=dict)

    def metric(self, **match):
        """Rows whose fields equal all of ``match``."""
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _fmt(x):
    return f"{x:.12e}"


def _config_hash(cfg):
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _map(fn, tasks, jobs):
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _class_for(method, cfg, radius):
    feats = features_r1(cfg) if method.startswith("R1") else features_r2(cfg)
    return RewardClass(feats, "l1", radius)


def expert(cfg, cmdp=None):
    """Expert occupancy (and policy) for the configured reward under ``cmdp``."""
    cmdp = cmdp or build_gridworld(cfg)
    return solve_rl_constrained(cmdp, cmdp.reward, cfg.beta)


def _reward_grid(cfg, r):
    return np.asarray(r[:cfg.n]).reshape(cfg.height, cfg.width).round(12).tolist()


def _policy_grid(cfg, pi):
    return np.asarray(pi).reshape(cfg.height, cfg.width, -1).round(12).tolist()


def _generalization_cell(task):
    cfg, method, radius, gda = task
    train, test = build_gridworld(cfg), build_gridworld(cfg, test=True)
    reg = Regularizer.entropy(cfg.beta)
    mu_train = expert(cfg, train).occupancy
    mu_test = expert(cfg, test).occupancy
    cmdp = train if method.endswith("-F") else train.without_constraints()
    try:
        res = gda_irl(cmdp, _class_for(method, cfg, radius), mu_train, gda)
        rows = []
        for regime, env, mu_e in (("train", train, mu_train), ("test", test, mu_test)):
            mu = solve_rl_constrained(env, res.reward, cfg.beta).occupancy
            delta_mu = float(np.abs(mu_e - mu).sum())
            delta_j = objective(mu_e, env.reward, reg, cfg.n) - objective(mu, env.reward, reg, cfg.n)
            rows.append({"method": method, "b_regime": regime, "delta_mu": delta_mu, "delta_j": float(delta_j)})
        return method, rows, res, None
    except _SOLVER_ERRORS as exc:
        log.warning("method %s failed: %s", method, exc)
        return method, [], None, f"{type(exc).__name__}: {exc}"


def run_generalization_experiment(config=None, out_dir=None, *, methods=GENERALIZATION_METHODS,
                                  episodes=200_000, radius=10.0, gda=None, jobs=1):
    """Learn rewards from the exact expert occupancy and test them at ``b`` and ``b_test``.

    Methods are ``R1``/``R2`` features combined with constrained (``F``) or
    unconstrained (``M``) IRL. ``radius`` is the l1 bound on the weights, large
    enough not to bind at the recovered rewards.
    """
    cfg = config or GridworldConfig()
    gda = gda or GdaConfig(episodes=episodes, beta=cfg.beta, record_every=max(1, episodes // 100))
    unknown = set(methods) - set(GENERALIZATION_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    tasks = [(cfg, m, radius, gda) for m in methods]
    results = _map(_generalization_cell, tasks, jobs)
    train = build_gridworld(cfg)
    sol = expert(cfg, train)
    rows, errors = [], {}
    rewards = {"expert": _reward_grid(cfg, train.reward)}
    policies = {"expert": _policy_grid(cfg, sol.policy)}
    for method, method_rows, res, err in results:
        rows.extend(method_rows)
        if err:
            errors[method] = err
        else:
            rewards[method] = _reward_grid(cfg, res.reward)
            policies[method] = _policy_grid(cfg, res.policy)
    meta = {
        "experiment": "generalization",
        "config": cfg.to_dict(),
        "config_hash": _config_hash(cfg),
        "gda": gda.to_dict(),
        "radius": radius,
        "methods": list(methods),
        "errors": errors,
        "version": f"cirl-{__version__}",
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "metrics.csv", ["method", "b_regime", "delta_mu", "delta_j"],
                   [[r["method"], r["b_regime"], r["delta_mu"], r["delta_j"]] for r in rows])
        _write_json(out / "reward_grid.json", rewards)
        _write_json(out / "policy_grid.json", policies)
        _write_json(out / "run_meta.json", meta)
    return ExperimentReport(rows, meta, errors)


def policy_error(pi_ref, pi, weights=None):
    """Sum over states of ``||pi_ref(.|s) - pi(.|s)||_1``, optionally state-weighted."""
    per_state = np.abs(np.asarray(pi_ref) - np.asarray(pi)).sum(axis=1)
    if weights is None:
        return float(per_state.sum())
    return float(np.asarray(weights) @ per_state)


def _sample_class(method, cfg):
    phi = features_r2(cfg)
    if "-l1-" in method:
        return RewardClass(phi, "l1", 1.0)
    return RewardClass(phi, "l2", 1.0 / math.sqrt(2.0))


def _demo_seed(base, count, index):
    return [int(base), int(count), int(index)]


def _finite_sample_cell(task):
    cfg, count, horizon, index, base_seed, methods, gda = task
    train = build_gridworld(cfg)
    sol = expert(cfg, train)
    demos = sample_demonstrations(train, sol.policy, count, horizon, _demo_seed(base_seed, count, index))
    mu_hat = estimate_occupancy(demos, cfg.gamma, train.n, train.m)
    out = []
    for method in methods:
        cmdp = train if method.endswith("-F") else train.without_constraints()
        try:
            res = gda_irl(cmdp, _sample_class(method, cfg), mu_hat, gda)
        except _SOLVER_ERRORS as exc:
            out.append((count, method, index, None, f"{type(exc).__name__}: {exc}"))
            continue
        out.append((count, method, index,
                    (policy_error(sol.policy, res.policy),
                     potential_shaping_distance(res.reward, train.reward)), None))
    return out


def run_finite_sample_experiment(config=None, trajectory_counts=(10, 100, 1000), horizon=1000,
                                 seeds=10, out_dir=None, *, methods=FINITE_SAMPLE_METHODS,
                                 episodes=10_000, base_seed=0, gda=None, jobs=1):
    """Learn from sampled demonstrations for each trajectory count and seed.

    Reports per-count median and 0.1/0.9 quantiles of the policy error
    (summed l1 distance of the learned policy to the expert's) and the reward
    error (distance to the expert reward up to a constant).
    """
    cfg = config or GridworldConfig()
    counts = [int(c) for c in trajectory_counts]
    if not counts:
        raise ValueError("trajectory_counts must be nonempty")
    unknown = set(methods) - set(FINITE_SAMPLE_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    gda = gda or GdaConfig(episodes=episodes, beta=cfg.beta, record_every=max(1, episodes // 10))
    tasks = [(cfg, c, horizon, i, base_seed, tuple(methods), gda) for c in counts for i in range(seeds)]
    cells = [row for chunk in _map(_finite_sample_cell, tasks, jobs) for row in chunk]
    cells.sort(key=lambda r: (counts.index(r[0]), methods.index(r[1]), r[2]))
    errors = {f"{c}/{m}/{i}": e for c, m, i, _, e in cells if e}
    raw, rows = [], []
    for c in counts:
        for m in methods:
            vals = np.array([v for cc, mm, _, v, _ in cells if cc == c and mm == m and v is not None])
            raw.extend([[c, m, i, v[0], v[1]] for cc, mm, i, v, _ in cells if cc == c and mm == m and v is not None])
            if not len(vals):
                continue
            for q in QUANTILES:
                rows.append({"N": c, "method": m, "quantile": q,
                             "policy_error": float(np.quantile(vals[:, 0], q)),
                             "reward_error": float(np.quantile(vals[:, 1], q))})
    meta = {
        "experiment": "finite_sample",
        "config": cfg.to_dict(),
        "config_hash": _config_hash(cfg),
        "gda": gda.to_dict(),
        "trajectory_counts": counts,
        "horizon": horizon,
        "seeds": seeds,
        "base_seed": base_seed,
        "methods": list(methods),
        "errors": errors,
        "version": f"cirl-{__version__}",
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "metrics.csv", ["N", "method", "quantile", "policy_error", "reward_error"],
                   [[r["N"], r["method"], r["quantile"], r["policy_error"], r["reward_error"]] for r in rows])
        _write_csv(out / "runs.csv", ["N", "method", "seed", "policy_error", "reward_error"], raw)
        _write_json(out / "run_meta.json", meta)
    return ExperimentReport(rows, meta, errors)


def _bound_cell(task):
    cfg, count, horizon, index, base_seed, gda = task
    train = build_gridworld(cfg)
    sol = expert(cfg, train)
    demos = sample_demonstrations(train, sol.policy, count, horizon, _demo_seed(base_seed, count, index))
    mu_hat = estimate_occupancy(demos, cfg.gamma, train.n, train.m)
    res = gda_irl(train, _sample_class("R2-l1-F", cfg), mu_hat, gda)
    return policy_error(sol.policy, res.policy, weights=state_marginal(sol.occupancy, cfg.n))


def run_sample_bound_check(config=None, epsilon=0.5, delta=0.1, seeds=10, *, episodes=10_000,
                           base_seed=0, jobs=1):
    """Expert-weighted policy error at the calculator's ``(N, T)`` against ``sqrt(2 eps / beta)``.

    Uses the l1 class over all states (``R = 1``, ``d = n``) with constraints.
    """
    cfg = config or GridworldConfig()
    count, horizon = sample_size(epsilon, delta, 1.0, cfg.n, cfg.gamma)
    gda = GdaConfig(episodes=episodes, beta=cfg.beta, record_every=max(1, episodes // 10))
    tasks = [(cfg, count, horizon, i, base_seed, gda) for i in range(seeds)]
    errs = _map(_bound_cell, tasks, jobs)
    bound = math.sqrt(2.0 * epsilon / cfg.beta)
    return {"N": count, "T": horizon, "bound": bound, "errors": errs,
            "within": int(sum(e <= bound for e in errs))}
