"""Constrained inverse RL with linear reward classes.

The learner solves ``min_{w, xi >= 0} max_pi L(pi, w, xi)`` with
``L = w^T Phi^T (mu^pi - mu_E) - f(mu^pi) + xi^T (b - Psi^T mu^pi)`` by
simultaneous gradient descent-ascent: one entropy-regularized natural policy
gradient step for the policy, projected gradient steps for ``w`` and ``xi``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cmdp import Regularizer, check_policy, regularizer_value, uniform_policy
from .forward import soft_policy_evaluation
from .numerics import project_l1_ball, project_l2_ball, project_nonneg

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RewardClass:
    """Linear rewards ``Phi @ w`` with ``||w|| <= radius`` (or unbounded)."""

    phi: np.ndarray
    norm_kind: str = "l1"
    radius: float = 1.0

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        if phi.ndim != 2 or phi.shape[1] < 1:
            raise ValueError("phi must be an (n*m, d) matrix with d >= 1")
        if self.norm_kind not in ("l1", "l2", "unbounded"):
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")
        if self.norm_kind != "unbounded" and not self.radius > 0:
            raise ValueError("radius must be positive for a bounded class")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self):
        return self.phi.shape[1]

    @property
    def bounded(self):
        return self.norm_kind != "unbounded"

    def norm(self, w):
        if self.norm_kind == "l2":
            return float(np.linalg.norm(w))
        return float(np.abs(w).sum())

    def project(self, w):
        if self.norm_kind == "l1":
            return project_l1_ball(w, self.radius)
        if self.norm_kind == "l2":
            return project_l2_ball(w, self.radius)
        return np.asarray(w, dtype=float).copy()

    def reward(self, w):
        return self.phi @ w

    @property
    def feature_bound(self):
        """``R = max_{s,a} ||Phi(s, a)||_inf``."""
        return float(np.abs(self.phi).max())


@dataclass(frozen=True, eq=False)
class Demonstrations:
    """``N`` trajectories of ``T + 1`` state-action pairs, stored as two ``(N, T+1)`` arrays."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states)
        a = np.asarray(self.actions)
        if s.ndim != 2 or s.shape != a.shape:
            raise ValueError("states and actions must be equal-shape (N, T+1) arrays")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @classmethod
    def from_trajectories(cls, trajectories):
        """Build from a list of ``[[s, a], ...]`` sequences of equal length."""
        trajs = [np.asarray(t, dtype=np.int64).reshape(-1, 2) for t in trajectories]
        if not trajs:
            raise ValueError("no trajectories")
        lengths = {len(t) for t in trajs}
        if len(lengths) != 1:
            raise ValueError(f"trajectories have different lengths {sorted(lengths)}")
        arr = np.stack(trajs)
        return cls(arr[:, :, 0], arr[:, :, 1])

    @property
    def count(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1] - 1

    def trajectories(self):
        return [np.stack([s, a], axis=1).tolist() for s, a in zip(self.states, self.actions)]

    def validate(self, n, m):
        if self.states.size and (self.states.min() < 0 or self.states.max() >= n):
            raise ValueError("state index out of range")
        if self.actions.size and (self.actions.min() < 0 or self.actions.max() >= m):
            raise ValueError("action index out of range")


@dataclass(frozen=True)
class GdaConfig:
    """Settings for :func:`gda_irl`.

    ``eta`` is the shared learning rate; ``None`` means ``(1 - gamma) / beta``,
    at which the policy step is exactly soft policy iteration. ``npg_eta`` and
    ``reward_eta`` override it for the policy and for ``(w, xi)`` respectively.
    """

    eta: float | None = None
    episodes: int = 20_000
    beta: float = 1.0
    seed: int = 0
    record_every: int = 100
    npg_eta: float | None = None
    reward_eta: float | None = None

    def __post_init__(self):
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.episodes < 1:
            raise ValueError("need at least one episode")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    def step_sizes(self, gamma):
        eta = (1.0 - gamma) / self.beta if self.eta is None else self.eta
        npg = eta if self.npg_eta is None else self.npg_eta
        rew = eta if self.reward_eta is None else self.reward_eta
        return npg, rew

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class TraceRow:
    episode: int
    ipm: float
    max_violation: float
    lagrangian: float


@dataclass
class IrlResult:
    weights: np.ndarray
    reward: np.ndarray
    dual: np.ndarray
    policy: np.ndarray
    occupancy: np.ndarray
    trace: list = field(default_factory=list)


class IpmVerdict(enum.Enum):
    EQUAL = "equal"
    UNEQUAL = "unequal"


def estimate_occupancy(demos, gamma, n, m):
    """Discounted empirical occupancy ``(1-gamma)/N sum_i sum_t gamma^t 1(s_t, a_t)``.

    Total mass is ``1 - gamma**(T+1)``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if demos.count == 0:
        raise ValueError("empty dataset")
    demos.validate(n, m)
    weights = (1.0 - gamma) * gamma ** np.arange(demos.horizon + 1) / demos.count
    idx = demos.actions * n + demos.states
    return np.bincount(idx.ravel(), weights=np.broadcast_to(weights, idx.shape).ravel(), minlength=n * m)


def ipm_distance(reward_class, mu, mu_ref, tol=1e-12):
    """``max_{r in R} r^T (mu_ref - mu)`` for a linear reward class.

    Bounded classes give ``radius * ||Phi^T (mu - mu_ref)||_*`` (the dual
    norm: inf-norm for l1 balls, 2-norm for l2 balls). For the unbounded class
    the distance is 0 or infinity, returned as an :class:`IpmVerdict`.
    """
    diff = reward_class.phi.T @ (np.asarray(mu, dtype=float) - np.asarray(mu_ref, dtype=float))
    if reward_class.norm_kind == "unbounded":
        return IpmVerdict.EQUAL if np.abs(diff).max() <= tol else IpmVerdict.UNEQUAL
    if reward_class.norm_kind == "l1":
        return reward_class.radius * float(np.abs(diff).max())
    return reward_class.radius * float(np.linalg.norm(diff))


def npg_step(cmdp, policy, r, beta, eta):
    """One entropy-regularized natural policy gradient step (softmax parametrisation).

    ``pi+(a|s) ~ pi(a|s)^(1 - eta beta/(1-gamma)) exp(eta q(s,a)/(1-gamma))`` with
    ``q`` the soft q-values of ``pi`` under ``r``. With ``eta = (1-gamma)/beta``
    this is one step of soft policy iteration.
    """
    pi = check_policy(policy, cmdp.n, cmdp.m)
    if np.any(pi <= 0):
        raise ValueError("natural policy gradient needs a strictly positive policy")
    limit = (1.0 - cmdp.gamma) / beta
    if not 0 < eta <= limit * (1 + 1e-12):
        raise ValueError(f"eta must lie in (0, (1-gamma)/beta] = (0, {limit:g}]")
    return _npg(cmdp, pi, np.asarray(r, dtype=float), beta, min(eta, limit))


def _npg(cmdp, pi, r, beta, eta):
    _, q = soft_policy_evaluation(cmdp, pi, r, beta)
    scale = eta / (1.0 - cmdp.gamma)
    logits = scale * q.reshape(cmdp.m, cmdp.n).T
    keep = 1.0 - scale * beta
    if keep > 0:
        logits = logits + keep * np.log(pi)
    logits -= logits.max(axis=1, keepdims=True)
    new = np.exp(logits)
    return new / new.sum(axis=1, keepdims=True)


def lagrangian(reward_class, w, xi, mu, mu_expert, cmdp, reg):
    value = float(w @ (reward_class.phi.T @ (mu - mu_expert))) - regularizer_value(mu, reg, cmdp.n)
    if cmdp.k:
        value += float(xi @ (cmdp.b - cmdp.psi.T @ mu))
    return value


def gda_irl(cmdp, reward_class, mu_expert, config=None, policy0=None):
    """Gradient descent-ascent for constrained entropy-regularized IRL.

    Starts from the uniform policy, ``w = 0`` and ``xi = 0``. Each episode:
    ``r = Phi w - Psi xi``; one NPG step on the policy; exact ``mu^pi``;
    ``w <- Proj(w - eta Phi^T (mu^pi - mu_E))``; ``xi <- max(0, xi - eta (b - Psi^T mu^pi))``.
    A CMDP without constraints gives unconstrained IRL.
    """
    from .cmdp import _occupancy

    config = config or GdaConfig()
    if not reward_class.bounded:
        raise ValueError("gradient descent-ascent needs a bounded reward class")
    mu_expert = np.asarray(mu_expert, dtype=float).reshape(-1)
    if mu_expert.size != cmdp.nm or reward_class.phi.shape[0] != cmdp.nm:
        raise ValueError("dimension mismatch between CMDP, reward class and expert")
    npg_eta, rew_eta = config.step_sizes(cmdp.gamma)
    limit = (1.0 - cmdp.gamma) / config.beta
    if npg_eta > limit * (1 + 1e-12):
        raise ValueError(f"policy step {npg_eta:g} exceeds (1-gamma)/beta = {limit:g}")
    npg_eta = min(npg_eta, limit)
    reg = Regularizer.entropy(config.beta)
    phi, psi, b = reward_class.phi, cmdp.psi, cmdp.b
    pi = uniform_policy(cmdp.n, cmdp.m) if policy0 is None else check_policy(policy0, cmdp.n, cmdp.m)
    w = np.zeros(reward_class.d)
    xi = np.zeros(cmdp.k)
    sigma_e = phi.T @ mu_expert
    trace = []
    mu = _occupancy(cmdp, pi)
    for episode in range(1, config.episodes + 1):
        r = phi @ w - psi @ xi
        pi = _npg(cmdp, pi, r, config.beta, npg_eta)
        mu = _occupancy(cmdp, pi)
        w = reward_class.project(w - rew_eta * (phi.T @ mu - sigma_e))
        if cmdp.k:
            xi = project_nonneg(xi - rew_eta * (b - psi.T @ mu))
        if episode % config.record_every == 0 or episode == config.episodes:
            lag = lagrangian(reward_class, w, xi, mu, mu_expert, cmdp, reg)
            if not math.isfinite(lag) or abs(lag) > DIVERGENCE_LIMIT:
                raise DivergenceError(f"Lagrangian reached {lag:.3g} at episode {episode}")
            viol = float(np.maximum(psi.T @ mu - b, 0.0).max()) if cmdp.k else 0.0
            trace.append(TraceRow(episode, ipm_distance(reward_class, mu, mu_expert), viol, lag))
    return IrlResult(w, phi @ w, xi, pi, mu, trace)


def sample_size(epsilon, delta, feature_bound, d, gamma):
    """Trajectory count and horizon that make the learned reward ``epsilon``-suboptimal.

    ``N = ceil(32 R^2 / eps^2 * log(2d / delta))``,
    ``T = ceil(log(eps / (8R)) / log(gamma))``.
    """
    R = float(feature_bound)
    if not R > 0:
        raise ValueError("feature bound R must be positive")
    if not 0 < epsilon <= 8 * R:
        raise ValueError("epsilon must lie in (0, 8R]")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if d < 1:
        raise ValueError("d must be a positive integer")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    N = math.ceil(32.0 * R * R / (epsilon * epsilon) * math.log(2.0 * d / delta))
    T = max(0, math.ceil(math.log(epsilon / (8.0 * R)) / math.log(gamma)))
    return N, T
