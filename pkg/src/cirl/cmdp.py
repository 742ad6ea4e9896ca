"""Constrained MDPs and the occupancy-measure calculus.

State-action vectors use the action-major layout: the entry of ``(s, a)``
lives at index ``a * n + s``. Transition matrices are ``(n*m, n)`` with rows
in that order, so ``E - gamma * P`` and the constraint matrix ``psi`` line up
block by block with one ``n x n`` block per action.

Policies are plain ``(n, m)`` arrays and occupancy measures plain
``(n*m,)`` arrays; the functions here validate them on entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import solve_linear

STATE_MASS_TOL = 1e-12
GRAD_BOUNDARY_TOL = 1e-12
NEG_CLAMP_TOL = 1e-12
_STOCHASTIC_TOL = 1e-12


class DimensionError(ValueError):
    pass


class BoundaryGradientError(ValueError):
    """The entropy regularizer has no gradient at a boundary occupancy measure."""


def sa_index(s, a, n):
    return a * n + s


def to_grid(vec, n, m):
    """Reshape an action-major vector into an ``(n, m)`` state-by-action array."""
    return np.asarray(vec).reshape(m, n).T


def from_grid(arr):
    """Inverse of :func:`to_grid`."""
    return np.ascontiguousarray(np.asarray(arr, dtype=float).T).reshape(-1)


def stacked_identity(n, m):
    """The ``(n*m, n)`` matrix ``E = [I_n; ...; I_n]``."""
    return np.tile(np.eye(n), (m, 1))


@dataclass(frozen=True, eq=False)
class Cmdp:
    """A tabular constrained MDP ``(S, A, P, nu0, psi, b, gamma)``.

    ``reward`` is optional: IRL consumes a CMDP without one.
    """

    n: int
    m: int
    gamma: float
    nu0: np.ndarray
    transition: np.ndarray
    psi: np.ndarray = None
    b: np.ndarray = None
    reward: np.ndarray | None = None
    _p3: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n, m = int(self.n), int(self.m)
        if n < 1:
            raise ValueError("need at least one state")
        if m < 2:
            raise ValueError("need at least two actions")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        nu0 = np.asarray(self.nu0, dtype=float).reshape(-1)
        P = np.asarray(self.transition, dtype=float)
        if nu0.shape != (n,):
            raise DimensionError(f"nu0 must have length {n}")
        if P.shape != (n * m, n):
            raise DimensionError(f"transition must be {(n * m, n)}, got {P.shape}")
        if np.any(nu0 < 0) or abs(nu0.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("nu0 must be a probability vector")
        if np.any(P < 0) or np.abs(P.sum(axis=1) - 1.0).max() > _STOCHASTIC_TOL:
            raise ValueError("transition rows must be probability vectors")
        psi = np.zeros((n * m, 0)) if self.psi is None else np.asarray(self.psi, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        if psi.shape[0] != n * m:
            raise DimensionError(f"psi must have {n * m} rows")
        if psi.shape[1] != b.size:
            raise DimensionError(f"psi has {psi.shape[1]} constraints but b has {b.size}")
        r = self.reward
        if r is not None:
            r = np.asarray(r, dtype=float).reshape(-1)
            if r.shape != (n * m,):
                raise DimensionError(f"reward must have length {n * m}")
            r.setflags(write=False)
        for arr in (nu0, P, psi, b):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "nu0", nu0)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "reward", r)
        p3 = P.reshape(m, n, n)
        p3.setflags(write=False)
        object.__setattr__(self, "_p3", p3)

    @property
    def k(self):
        return self.psi.shape[1]

    @property
    def nm(self):
        return self.n * self.m

    @property
    def transition_blocks(self):
        """Transition law as an ``(m, n, n)`` array indexed ``[a, s, s']``."""
        return self._p3

    def shaping_matrix(self):
        """``E - gamma * P``; its columns span the potential-shaping subspace."""
        return stacked_identity(self.n, self.m) - self.gamma * self.transition

    def replace(self, **changes):
        fields = dict(n=self.n, m=self.m, gamma=self.gamma, nu0=self.nu0,
                      transition=self.transition, psi=self.psi, b=self.b, reward=self.reward)
        fields.update(changes)
        return Cmdp(**fields)

    def without_constraints(self):
        return self.replace(psi=None, b=None)

    def state_transition(self, policy):
        """Policy-induced ``(n, n)`` state transition matrix."""
        return np.einsum("sa,ast->st", policy, self._p3)


@dataclass(frozen=True)
class Regularizer:
    """Convex regularizer of the occupancy measure.

    ``entropy``: negative conditional entropy of the induced policy, weighted
    by ``beta``. ``quadratic``: ``beta * ||mu||^2 / 2``. ``none``: zero.
    """

    kind: str = "entropy"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("entropy", "quadratic", "none"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind != "none" and not self.beta > 0:
            raise ValueError("beta must be positive")

    @classmethod
    def entropy(cls, beta=1.0):
        return cls("entropy", beta)

    @classmethod
    def quadratic(cls, beta=1.0):
        return cls("quadratic", beta)

    @classmethod
    def none(cls):
        return cls("none", 0.0)


def check_policy(policy, n=None, m=None):
    pi = np.asarray(policy, dtype=float)
    if pi.ndim != 2 or (n is not None and pi.shape[0] != n) or (m is not None and pi.shape[1] != m):
        raise DimensionError(f"policy must have shape {(n, m)}, got {pi.shape}")
    if np.any(pi < 0) or np.abs(pi.sum(axis=1) - 1.0).max() > _STOCHASTIC_TOL:
        raise ValueError("policy rows must be probability vectors")
    return pi


def clamp_occupancy(mu):
    """Clamp tiny negative entries to zero; larger negatives are an error."""
    mu = np.asarray(mu, dtype=float)
    if mu.size and mu.min() < -NEG_CLAMP_TOL:
        raise ValueError(f"occupancy measure has a negative entry {mu.min():.3g}")
    return np.maximum(mu, 0.0)


def _check_length(vec, length, what):
    vec = np.asarray(vec, dtype=float).reshape(-1)
    if vec.size != length:
        raise DimensionError(f"{what} must have length {length}, got {vec.size}")
    return vec


def state_marginal(mu, n):
    """State occupancy ``E^T mu``."""
    return np.asarray(mu).reshape(-1, n).sum(axis=0)


def occupancy_from_policy(cmdp, policy):
    """Discounted state-action occupancy measure of ``policy``.

    Solves ``(I - gamma P_pi^T) nu = (1 - gamma) nu0`` and sets
    ``mu(s, a) = pi(a|s) nu(s)``.
    """
    pi = check_policy(policy, cmdp.n, cmdp.m)
    return _occupancy(cmdp, pi)


def _occupancy(cmdp, pi):
    # unchecked fast path for the inner loops
    A = np.eye(cmdp.n) - cmdp.gamma * cmdp.state_transition(pi).T
    nu = solve_linear(A, (1.0 - cmdp.gamma) * cmdp.nu0, check_finite=False)
    return clamp_occupancy((pi * nu[:, None]).T.reshape(-1))


def policy_from_occupancy(mu, n, m, state_mass_tol=STATE_MASS_TOL):
    """Induced policy; states with (near-)zero mass get the uniform row."""
    mu = clamp_occupancy(_check_length(mu, n * m, "occupancy"))
    grid = to_grid(mu, n, m)
    mass = grid.sum(axis=1)
    pi = np.full((n, m), 1.0 / m)
    visited = mass > state_mass_tol
    pi[visited] = grid[visited] / mass[visited, None]
    return pi


def bellman_flow_residual(cmdp, mu):
    """``||(E - gamma P)^T mu - (1 - gamma) nu0||_inf``."""
    mu = _check_length(mu, cmdp.nm, "occupancy")
    flow = cmdp.shaping_matrix().T @ mu
    return float(np.abs(flow - (1.0 - cmdp.gamma) * cmdp.nu0).max())


def _xlogy_ratio(x, y):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos] / y[pos])
    return out


def regularizer_value(mu, reg, n):
    """Value of the regularizer at ``mu`` (``0 log 0 = 0``).

    For a single state the entropy term is ``beta * sum mu log mu``; on the
    simplex this coincides with the conditional form used for ``n > 1``.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if reg.kind == "none":
        return 0.0
    if reg.kind == "quadratic":
        return 0.5 * reg.beta * float(mu @ mu)
    if np.any(mu < -NEG_CLAMP_TOL):
        raise ValueError("entropy regularizer needs a nonnegative argument")
    mu = np.maximum(mu, 0.0)
    if n == 1:
        return reg.beta * float(_xlogy_ratio(mu, np.ones_like(mu)).sum())
    grid = mu.reshape(-1, n)
    mass = np.broadcast_to(grid.sum(axis=0), grid.shape)
    return reg.beta * float(_xlogy_ratio(grid, mass).sum())


def regularizer_gradient(mu, reg, n, boundary_tol=GRAD_BOUNDARY_TOL):
    """Gradient of the regularizer in the action-major layout.

    Entropy: ``beta * log pi^mu`` for ``n > 1`` and ``beta * (log mu + 1)``
    for ``n == 1``. Raises :class:`BoundaryGradientError` when some induced
    policy entry is at most ``boundary_tol`` (the subdifferential is empty).
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if reg.kind == "none":
        return np.zeros_like(mu)
    if reg.kind == "quadratic":
        return reg.beta * mu
    grid = mu.reshape(-1, n)
    mass = grid.sum(axis=0)
    if np.any(mass <= STATE_MASS_TOL):
        raise BoundaryGradientError("entropy gradient undefined: a state has zero mass")
    pi = grid / mass
    if pi.min() <= boundary_tol:
        raise BoundaryGradientError("entropy gradient undefined at the relative boundary")
    if n == 1:
        return reg.beta * (np.log(mu) + 1.0)
    return reg.beta * np.log(pi).reshape(-1)


def objective(mu, r, reg, n):
    """``J(mu, r) = r^T mu - f(mu)``."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    r = _check_length(r, mu.size, "reward")
    return float(r @ mu) - regularizer_value(mu, reg, n)


def constraint_violation(cmdp, mu):
    """``psi^T mu - b``; positive entries are violated constraints."""
    mu = _check_length(mu, cmdp.nm, "occupancy")
    return cmdp.psi.T @ mu - cmdp.b


def uniform_policy(n, m):
    return np.full((n, m), 1.0 / m)
