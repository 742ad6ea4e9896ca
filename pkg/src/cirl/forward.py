"""Forward solvers: entropy-regularized MDPs and constrained MDPs.

``soft_value_iteration`` solves the unconstrained problem, ``solve_rl_constrained``
handles safety constraints by projected dual ascent on the Lagrange multipliers,
and ``frank_wolfe_solve`` maximises ``r^T mu - f(mu)`` over the feasible polytope
for any differentiable regularizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .cmdp import (
    BoundaryGradientError,
    _occupancy,
    regularizer_gradient,
)
from .numerics import (
    SLATER_MARGIN,
    LpFeasibilityProblem,
    LpStatus,
    lp_feasible,
    lp_maximize,
    project_nonneg,
    solve_linear,
)

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """A solver ran out of iterations before meeting its tolerance."""


class SlaterViolationError(ValueError):
    """The feasible set has no strictly feasible point."""


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration caps shared by the forward solvers."""

    tol: float = 1e-9
    max_iter: int = 100_000
    dual_max_iter: int = 10_000
    fw_iters: int = 10_000
    slater_margin: float = SLATER_MARGIN

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class SoftSolution:
    value: np.ndarray
    qvalue: np.ndarray
    policy: np.ndarray
    occupancy: np.ndarray
    iterations: int
    residual: float
    converged: bool = True


@dataclass
class ConstrainedSolution:
    occupancy: np.ndarray
    dual: np.ndarray
    policy: np.ndarray
    duality_gap: float
    iterations: int = 0
    dual_residual: float = 0.0
    converged: bool = True


@dataclass
class FrankWolfeResult:
    occupancy: np.ndarray
    gap: float
    iterations: int


def softmax_policy(q, n, m, beta):
    """Row-wise softmax of ``q / beta`` as an ``(n, m)`` policy."""
    z = q.reshape(m, n).T / beta
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def soft_bellman(cmdp, r, v, beta):
    """One soft Bellman backup: returns ``(q, beta * logsumexp(q / beta))``."""
    q = r + cmdp.gamma * (cmdp.transition @ v)
    z = q.reshape(cmdp.m, cmdp.n) / beta
    zmax = z.max(axis=0)
    return q, beta * (zmax + np.log(np.exp(z - zmax).sum(axis=0)))


def soft_value_iteration(cmdp, r, beta, tol=1e-10, max_iter=100_000, v0=None):
    """Soft value iteration for the entropy-regularized MDP with reward ``r``.

    Stops once the sup-norm change falls below ``tol * (1 - gamma) / (2 gamma)``,
    which bounds the distance to the fixed point by ``tol / 2``. If
    ``max_iter`` runs out, the last iterate is returned with ``converged=False``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != cmdp.nm:
        raise ValueError(f"reward must have length {cmdp.nm}")
    g = cmdp.gamma
    threshold = tol * (1.0 - g) / (2.0 * g)
    v = np.zeros(cmdp.n) if v0 is None else np.array(v0, dtype=float)
    change = math.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        _, v_new = soft_bellman(cmdp, r, v, beta)
        change = float(np.abs(v_new - v).max())
        v = v_new
        if change <= threshold:
            converged = True
            break
    if not converged:
        log.warning("soft value iteration stopped after %d iterations (change %.3g)", it, change)
    q = r + g * (cmdp.transition @ v)
    pi = softmax_policy(q, cmdp.n, cmdp.m, beta)
    mu = _occupancy(cmdp, pi)
    return SoftSolution(v, q, pi, mu, it, change, converged)


def _feasible_set_lp(cmdp, margin=0.0):
    """Equalities for ``mu >= margin``, flow constraints and ``psi^T mu <= b - margin``.

    Variables are ``(mu - margin, slack)``; all nonnegative.
    """
    nm, k = cmdp.nm, cmdp.k
    flow = cmdp.shaping_matrix().T
    ones = np.ones(nm)
    top = np.hstack([flow, np.zeros((cmdp.n, k))])
    rhs_top = (1.0 - cmdp.gamma) * cmdp.nu0 - margin * (flow @ ones)
    if k == 0:
        return LpFeasibilityProblem(top, rhs_top)
    bottom = np.hstack([cmdp.psi.T, np.eye(k)])
    rhs_bottom = cmdp.b - margin - margin * (cmdp.psi.T @ ones)
    return LpFeasibilityProblem(np.vstack([top, bottom]), np.concatenate([rhs_top, rhs_bottom]))


def slater_point(cmdp, margin=SLATER_MARGIN):
    """A strictly feasible occupancy measure, or ``None`` if there is none at ``margin``."""
    res = lp_feasible(_feasible_set_lp(cmdp, margin))
    if res.status is not LpStatus.FEASIBLE:
        return None
    return res.x[:cmdp.nm] + margin


def slater_check(cmdp, margin=SLATER_MARGIN):
    """True if some occupancy measure has ``mu >= margin`` and ``psi^T mu <= b - margin``."""
    return slater_point(cmdp, margin) is not None


def dual_value(cmdp, sol, xi):
    """Lagrange dual ``max_mu r^T mu - f(mu) + xi^T (b - psi^T mu)`` from a soft solution."""
    return (1.0 - cmdp.gamma) * float(cmdp.nu0 @ sol.value) + float(xi @ cmdp.b)


def solve_rl_constrained(cmdp, r, beta, tol=1e-9, max_iter=10_000, check_slater=True, xi0=None):
    """Entropy-regularized CMDP through its Lagrange dual.

    The dual function ``g(xi)`` is differentiable with gradient
    ``b - psi^T mu(xi)``, where ``mu(xi)`` solves the unconstrained problem
    for ``r - psi @ xi``. It is minimised over ``xi >= 0`` by projected
    gradient steps (Barzilai-Borwein step length, Armijo backtracking).
    Terminates when the positive part of the constraint violation and every
    complementary-slackness product are at most ``tol``.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    if check_slater and cmdp.k and not slater_check(cmdp):
        raise SlaterViolationError("no strictly feasible occupancy measure")
    inner_tol = max(tol * 1e-2, 1e-11)

    def inner(xi, v0=None):
        sol = soft_value_iteration(cmdp, r - cmdp.psi @ xi, beta, tol=inner_tol, v0=v0)
        if not sol.converged:
            raise NonConvergenceError("inner soft value iteration did not converge")
        return sol

    if cmdp.k == 0:
        sol = inner(np.zeros(0))
        return ConstrainedSolution(sol.occupancy, np.zeros(0), sol.policy, 0.0, sol.iterations)
    xi = np.zeros(cmdp.k) if xi0 is None else project_nonneg(xi0)
    sol = inner(xi)
    g = dual_value(cmdp, sol, xi)
    step = 1.0 / (1.0 + np.abs(cmdp.psi).sum(axis=1).max())
    slack = cmdp.b - cmdp.psi.T @ sol.occupancy
    # evaluation noise of the dual value; Armijo comparisons below this are meaningless
    noise = 1e-12 * (1.0 + abs(g))
    for t in range(1, max_iter + 1):
        residual = float(np.maximum(-slack, 0.0).max())
        cs = float(np.abs(xi * slack).max())
        if residual <= tol and cs <= tol:
            return ConstrainedSolution(sol.occupancy, xi, sol.policy, float(xi @ slack), t, residual)
        while True:
            xi_new = project_nonneg(xi - step * slack)
            d = xi_new - xi
            sol_new = inner(xi_new, sol.value)
            g_new = dual_value(cmdp, sol_new, xi_new)
            if g_new <= g + float(slack @ d) + (d @ d) / (2.0 * step) + noise or step < 1e-14:
                break
            step *= 0.5
        slack_new = cmdp.b - cmdp.psi.T @ sol_new.occupancy
        y = slack_new - slack
        sy = float(d @ y)
        step = float(d @ d) / sy if sy > 0 else 2.0 * step
        step = min(max(step, 1e-10), 1e10)
        xi, sol, g, slack = xi_new, sol_new, g_new, slack_new
    raise NonConvergenceError(
        f"dual descent did not reach tol={tol:g} in {max_iter} rounds "
        f"(violation {residual:.3g}, slackness {cs:.3g})")


def _start_point(cmdp, reg, margin):
    uniform = np.full((cmdp.n, cmdp.m), 1.0 / cmdp.m)
    mu = _occupancy(cmdp, uniform)
    strictly = mu.min() > 0 and np.all(cmdp.psi.T @ mu < cmdp.b)
    if strictly:
        return mu
    if reg.kind == "entropy":
        mu = slater_point(cmdp, margin)
        if mu is None:
            raise SlaterViolationError("entropy Frank-Wolfe needs a strictly feasible start")
        return mu
    res = lp_feasible(_feasible_set_lp(cmdp))
    if res.status is not LpStatus.FEASIBLE:
        raise InfeasibleError("feasible set is empty")
    return res.x[:cmdp.nm]


def frank_wolfe_solve(cmdp, r, reg, iters=10_000, gap_tol=0.0, margin=SLATER_MARGIN):
    """Conditional-gradient ascent on ``r^T mu - f(mu)`` over the feasible set.

    The linear subproblem is an LP over the flow polytope intersected with the
    safety constraints. Step ``2 / (t + 2)`` (starting at ``t = 1`` so the
    iterate never lands on a vertex), or exact line search for the quadratic
    and zero regularizers. Returns the last iterate and its Frank-Wolfe gap.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    base = _feasible_set_lp(cmdp)
    mu = _start_point(cmdp, reg, margin)
    nm = cmdp.nm
    gap = math.inf
    t = 0
    for t in range(1, iters + 1):
        grad = r - regularizer_gradient(mu, reg, cmdp.n)
        res = lp_maximize(np.concatenate([grad, np.zeros(cmdp.k)]), base)
        if res.status is not LpStatus.OPTIMAL:
            raise InfeasibleError(f"linear subproblem returned {res.status.value}")
        vertex = res.x[:nm]
        d = vertex - mu
        gap = float(grad @ d)
        if gap <= gap_tol:
            break
        if reg.kind == "quadratic":
            dd = float(d @ d)
            step = 1.0 if dd == 0 else min(1.0, max(0.0, gap / (reg.beta * dd)))
        elif reg.kind == "none":
            step = 1.0
        else:
            step = 2.0 / (t + 2.0)
        mu = mu + step * d
    mu = np.maximum(mu, 0.0)
    try:
        grad = r - regularizer_gradient(mu, reg, cmdp.n)
        res = lp_maximize(np.concatenate([grad, np.zeros(cmdp.k)]), base)
        gap = float(grad @ (res.x[:nm] - mu))
    except BoundaryGradientError:
        pass
    return FrankWolfeResult(mu, gap, t)


def soft_policy_evaluation(cmdp, policy, r, beta):
    """Soft value ``v^pi`` and soft q-values of ``policy`` under reward ``r``.

    ``v = (I - gamma P_pi)^{-1} sum_a pi (r - beta log pi)`` and
    ``q = r + gamma P v``.
    """
    pi = np.asarray(policy, dtype=float)
    n, m = cmdp.n, cmdp.m
    r_grid = r.reshape(m, n).T
    with np.errstate(divide="ignore"):
        logpi = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    r_pi = (pi * (r_grid - beta * logpi)).sum(axis=1)
    A = np.eye(n) - cmdp.gamma * cmdp.state_transition(pi)
    v = solve_linear(A, r_pi, check_finite=False)
    q = r + cmdp.gamma * (cmdp.transition @ v)
    return v, q


__all__ = [
    "ConstrainedSolution",
    "FrankWolfeResult",
    "InfeasibleError",
    "NonConvergenceError",
    "SlaterViolationError",
    "SoftSolution",
    "SolverConfig",
    "frank_wolfe_solve",
    "slater_check",
    "slater_point",
    "soft_bellman",
    "soft_policy_evaluation",
    "soft_value_iteration",
    "softmax_policy",
    "solve_rl_constrained",
]
