"""Reward identifiability: active sets, normal-cone membership and rank tests."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cmdp import (BoundaryGradientError, Cmdp, DimensionError, clamp_occupancy,
                   regularizer_gradient, stacked_identity)
from .numerics import LpFeasibilityProblem, lp_feasible, matrix_rank

ACTIVE_TOL = 1e-8
MEMBERSHIP_TOL = 1e-8


class InfeasibleOccupancyError(ValueError):
    pass


@dataclass(frozen=True)
class ActiveSets:
    """Active safety constraints (0-based) and zero state-action entries (flat index)."""

    safety_active: tuple = ()
    nonneg_active: tuple = ()

    def pairs(self, n):
        """Nonnegativity-active entries as ``(state, action)`` pairs."""
        return [(j % n, j // n) for j in self.nonneg_active]

    def to_dict(self, n):
        return {"safety": list(self.safety_active), "nonneg": [list(p) for p in self.pairs(n)]}


@dataclass
class IdentifiabilityReport:
    rank_phi: int
    rank_xi: int
    rank_joint: int
    condition_met: bool
    shaping_dimension: int
    details: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "ranks": {"phi": self.rank_phi, "xi": self.rank_xi, "joint": self.rank_joint,
                      "shaping": self.shaping_dimension},
            "condition_met": self.condition_met,
        }
        out["active_sets"] = self.details.get("active_sets")
        out["membership"] = self.details.get("membership")
        return out


def active_sets(cmdp, mu, tol=ACTIVE_TOL):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.size != cmdp.nm:
        raise DimensionError(f"occupancy must have length {cmdp.nm}")
    slack = cmdp.b - cmdp.psi.T @ mu
    if mu.min() < -tol or (cmdp.k and slack.min() < -tol):
        raise InfeasibleOccupancyError("occupancy violates a constraint by more than tol")
    safety = tuple(int(i) for i in np.nonzero(np.abs(slack) <= tol)[0])
    nonneg = tuple(int(j) for j in np.nonzero(mu <= tol)[0])
    return ActiveSets(safety, nonneg)


def shaping_subspace_basis(transition, gamma):
    """``E - gamma P``, whose columns span the potential-shaping subspace."""
    P = np.asarray(transition, dtype=float)
    n = P.shape[1]
    if P.shape[0] % n:
        raise DimensionError("transition must have n*m rows and n columns")
    return stacked_identity(n, P.shape[0] // n) - gamma * P


def _cone_system(cmdp, sets, target):
    """Columns ``[E - gamma P | psi_I | -e_J]``; the first ``n`` variables are free."""
    cols = [cmdp.shaping_matrix(), cmdp.psi[:, list(sets.safety_active)]]
    if sets.nonneg_active:
        cols.append(-np.eye(cmdp.nm)[:, list(sets.nonneg_active)])
    a = np.hstack(cols)
    lb = np.zeros(a.shape[1])
    lb[:cmdp.n] = -np.inf
    return LpFeasibilityProblem(a, target, lb)


def _feas_tol(rows, tol):
    # lp_feasible bounds the sum of artificials; spread the per-equation tolerance
    return tol * rows


def reward_in_solution_cone(cmdp, mu, r, reg, tol=MEMBERSHIP_TOL, active_tol=ACTIVE_TOL):
    """Is ``mu`` optimal for reward ``r``? Tests ``r - grad f(mu)`` against the normal cone.

    The cone is potential shaping plus the cone of active safety constraints
    plus the (negated) cone of active nonnegativity constraints. For the
    entropy regularizer a boundary ``mu`` has no subgradient, so the answer is
    ``False``.
    """
    mu = clamp_occupancy(np.asarray(mu, dtype=float).reshape(-1))
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != cmdp.nm:
        raise DimensionError(f"reward must have length {cmdp.nm}")
    sets = active_sets(cmdp, mu, active_tol)
    try:
        grad = regularizer_gradient(mu, reg, cmdp.n)
    except BoundaryGradientError:
        if reg.kind == "entropy":
            return False
        raise
    problem = _cone_system(cmdp, sets, r - grad)
    return lp_feasible(problem, tol=_feas_tol(cmdp.nm, tol)).feasible


def class_reward_in_solution_cone(cmdp, mu, reward_class, reg, tol=MEMBERSHIP_TOL,
                                  active_tol=ACTIVE_TOL):
    """Does some reward ``phi @ w`` of the class make ``mu`` optimal?

    Polyhedral classes only (l1 ball or unbounded); the l1 ball is encoded
    with split weights ``w = u - v`` and ``sum(u + v) + slack = radius``.
    """
    if reward_class.norm_kind == "l2":
        raise ValueError("the l2 ball is not polyhedral")
    mu = clamp_occupancy(np.asarray(mu, dtype=float).reshape(-1))
    sets = active_sets(cmdp, mu, active_tol)
    try:
        grad = regularizer_gradient(mu, reg, cmdp.n)
    except BoundaryGradientError:
        if reg.kind == "entropy":
            return False
        raise
    cone = _cone_system(cmdp, sets, -grad)
    phi = reward_class.phi
    d = phi.shape[1]
    # cone(x) - phi (u - v) = -grad f
    a = np.hstack([cone.a_eq, -phi, phi])
    lb = np.concatenate([cone.lower_bounds, np.zeros(2 * d)])
    b = -grad
    if reward_class.norm_kind == "l1":
        row = np.concatenate([np.zeros(cone.a_eq.shape[1]), np.ones(2 * d), [1.0]])
        a = np.vstack([np.hstack([a, np.zeros((a.shape[0], 1))]), row])
        lb = np.append(lb, 0.0)
        b = np.append(b, reward_class.radius)
    problem = LpFeasibilityProblem(a, b, lb)
    return lp_feasible(problem, tol=_feas_tol(a.shape[0], tol)).feasible


def constraint_matrix(cmdp):
    """``Xi = [E - gamma P, psi]``."""
    return np.hstack([cmdp.shaping_matrix(), cmdp.psi])


def rank_condition(reward_class, cmdp, tol=None):
    """Exact-identifiability test ``rank [Phi, Xi] == rank Phi + rank Xi``."""
    phi = reward_class.phi if hasattr(reward_class, "phi") else np.asarray(reward_class, dtype=float)
    if phi.shape[0] != cmdp.nm:
        raise DimensionError(f"features must have {cmdp.nm} rows")
    xi = constraint_matrix(cmdp)
    rank_phi = matrix_rank(phi, tol)
    rank_xi = matrix_rank(xi, tol)
    rank_joint = matrix_rank(np.hstack([phi, xi]), tol)
    return IdentifiabilityReport(
        rank_phi=rank_phi, rank_xi=rank_xi, rank_joint=rank_joint,
        condition_met=rank_joint == rank_phi + rank_xi,
        shaping_dimension=matrix_rank(cmdp.shaping_matrix(), tol),
    )


def potential_shaping_distance(r_hat, r_expert):
    """Distance of ``r_hat`` to the line ``r_expert + span(1)`` in the 2-norm."""
    diff = np.asarray(r_hat, dtype=float).reshape(-1) - np.asarray(r_expert, dtype=float).reshape(-1)
    return float(np.linalg.norm(diff - diff.mean()))


def shift_matrix(n):
    """Shift ``s -> s + 1`` with the last state absorbing."""
    D = np.zeros((n, n))
    D[np.arange(n - 1), np.arange(1, n)] = 1.0
    D[n - 1, n - 1] = 1.0
    return D


def rank_witness_pair(n, m):
    """Two transition laws whose shaping subspaces meet only in the constants.

    Action blocks alternate ``I, D, I, ...`` for the first law and
    ``D, I, D, ...`` for the second.
    """
    if n < 2 or m < 2:
        raise ValueError("need n >= 2 and m >= 2")
    I, D = np.eye(n), shift_matrix(n)
    P1 = np.vstack([I if a % 2 == 0 else D for a in range(m)])
    P2 = np.vstack([D if a % 2 == 0 else I for a in range(m)])
    return P1, P2


def generalizability_rank(P1, P2, gamma, tol=None):
    """``rank [E - gamma P1, E - gamma P2]``; ``2n - 1`` means only constant shifts are shared."""
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    if P1.shape != P2.shape:
        raise DimensionError("transition laws must have the same shape")
    for P in (P1, P2):
        if np.any(P < 0) or np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must be probability vectors")
    return matrix_rank(np.hstack([shaping_subspace_basis(P1, gamma),
                                  shaping_subspace_basis(P2, gamma)]), tol)


def identify(cmdp: Cmdp, reward_class, mu=None, r=None, reg=None):
    """Rank report, optionally with active sets and a cone-membership verdict."""
    report = rank_condition(reward_class, cmdp)
    if mu is not None:
        sets = active_sets(cmdp, mu)
        report.details["active_sets"] = sets.to_dict(cmdp.n)
        if r is not None and reg is not None:
            report.details["membership"] = bool(reward_in_solution_cone(cmdp, mu, r, reg))
    return report
