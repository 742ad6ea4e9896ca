"""Gridworld CMDP with slip dynamics and rectangular cost regions."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .cmdp import Cmdp
from .irl import Demonstrations

# up, down, left, right as (drow, dcol)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")


def _default_rects():
    return [[(2, 1), (3, 1)], [(2, 4), (3, 4)]]


@dataclass(frozen=True)
class GridworldConfig:
    """Layout and dynamics of the gridworld.

    Cells are ``(row, col)`` pairs; state index is ``row * width + col``.
    ``constraint_rects`` lists the cells of each cost region; ``b`` is the
    training threshold and ``b_test`` the (loose) threshold for the test regime.
    """

    width: int = 6
    height: int = 6
    success_prob: float = 0.9
    gamma: float = 0.9
    reward_cells: list = field(default_factory=lambda: [((0, 0), 0.5), ((5, 5), 0.5)])
    constraint_rects: list = field(default_factory=_default_rects)
    b: tuple = (0.02, 0.02)
    b_test: tuple = (1e3, 1e3)
    beta: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise ValueError("grid needs at least two cells")
        if not 0 < self.success_prob <= 1:
            raise ValueError("success_prob must lie in (0, 1]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        cells = [c for c, _ in self.reward_cells] + [c for rect in self.constraint_rects for c in rect]
        for row, col in cells:
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise ValueError(f"cell {(row, col)} outside the {self.height}x{self.width} grid")
        if len(self.b) != len(self.constraint_rects) or len(self.b_test) != len(self.constraint_rects):
            raise ValueError("one threshold per constraint region is required")

    @property
    def n(self):
        return self.width * self.height

    def cell(self, row, col):
        return row * self.width + col

    def to_dict(self):
        d = asdict(self)
        d["reward_cells"] = [[list(c), v] for c, v in self.reward_cells]
        d["constraint_rects"] = [[list(c) for c in rect] for rect in self.constraint_rects]
        d["b"], d["b_test"] = list(self.b), list(self.b_test)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "reward_cells" in data:
            data["reward_cells"] = [(tuple(c), float(v)) for c, v in data["reward_cells"]]
        if "constraint_rects" in data:
            data["constraint_rects"] = [[tuple(c) for c in rect] for rect in data["constraint_rects"]]
        for key in ("b", "b_test"):
            if key in data:
                data[key] = tuple(float(x) for x in data[key])
        return cls(**data)


def _step(cfg, row, col, move):
    r, c = row + move[0], col + move[1]
    if 0 <= r < cfg.height and 0 <= c < cfg.width:
        return cfg.cell(r, c)
    return cfg.cell(row, col)


def transition_matrix(cfg):
    """``(n*m, n)`` transition matrix built in exact rational arithmetic.

    The intended move succeeds with ``success_prob``; the remaining mass is
    spread uniformly over the four neighbours (target included). Moves that
    leave the grid keep the agent in place.
    """
    n, m = cfg.n, len(MOVES)
    p = Fraction(str(cfg.success_prob))
    slip = (1 - p) / len(MOVES)
    P = np.zeros((n * m, n))
    for a, move in enumerate(MOVES):
        for row in range(cfg.height):
            for col in range(cfg.width):
                s = cfg.cell(row, col)
                rowp = {}
                t = _step(cfg, row, col, move)
                rowp[t] = rowp.get(t, 0) + p
                for other in MOVES:
                    t = _step(cfg, row, col, other)
                    rowp[t] = rowp.get(t, 0) + slip
                assert sum(rowp.values()) == 1
                for t, q in rowp.items():
                    P[a * n + s, t] = float(q)
    return P


def state_reward(cfg):
    r = np.zeros(cfg.n)
    for (row, col), value in cfg.reward_cells:
        r[cfg.cell(row, col)] = value
    return r


def constraint_features(cfg):
    n, m = cfg.n, len(MOVES)
    psi = np.zeros((n * m, len(cfg.constraint_rects)))
    for i, rect in enumerate(cfg.constraint_rects):
        for row, col in rect:
            psi[cfg.cell(row, col)::n, i] = 1.0
    return psi


def build_gridworld(cfg=None, test=False):
    """Gridworld CMDP; ``test=True`` uses the loose thresholds ``b_test``."""
    cfg = cfg or GridworldConfig()
    n, m = cfg.n, len(MOVES)
    return Cmdp(
        n=n, m=m, gamma=cfg.gamma,
        nu0=np.full(n, 1.0 / n),
        transition=transition_matrix(cfg),
        psi=constraint_features(cfg),
        b=np.array(cfg.b_test if test else cfg.b, dtype=float),
        reward=np.tile(state_reward(cfg), m),
    )


def boundary_states(cfg):
    return [cfg.cell(r, c) for r in range(cfg.height) for c in range(cfg.width)
            if r in (0, cfg.height - 1) or c in (0, cfg.width - 1)]


def state_features(cfg, states=None):
    """Columns of ``E`` for the given states (all states by default)."""
    n, m = cfg.n, len(MOVES)
    states = range(n) if states is None else states
    phi = np.zeros((n * m, len(states)))
    for j, s in enumerate(states):
        phi[s::n, j] = 1.0
    return phi


def features_r1(cfg):
    """State indicators of the boundary cells."""
    return state_features(cfg, boundary_states(cfg))


def features_r2(cfg):
    """State indicators of every cell."""
    return state_features(cfg)


def expert_weights(cfg, states=None):
    """Weights ``w_E`` with ``phi @ w_E`` equal to the expert reward."""
    states = list(range(cfg.n)) if states is None else list(states)
    r = state_reward(cfg)
    if np.any(r[np.setdiff1d(np.arange(cfg.n), states)] != 0):
        raise ValueError("expert reward is not in the span of the features")
    return r[states]


def sample_demonstrations(cmdp, policy, count, horizon, seed):
    """Roll out ``count`` trajectories of length ``horizon + 1``; vectorised over trajectories."""
    if count < 1 or horizon < 0:
        raise ValueError("need count >= 1 and horizon >= 0")
    rng = np.random.default_rng(seed)
    n, m = cmdp.n, cmdp.m
    pi_cdf = np.cumsum(np.asarray(policy, dtype=float), axis=1)
    pi_cdf[:, -1] = 1.0
    p_cdf = np.cumsum(cmdp.transition, axis=1)
    p_cdf[:, -1] = 1.0
    nu_cdf = np.cumsum(cmdp.nu0)
    nu_cdf[-1] = 1.0
    states = np.empty((count, horizon + 1), dtype=np.int64)
    actions = np.empty((count, horizon + 1), dtype=np.int64)
    s = np.searchsorted(nu_cdf, rng.random(count), side="right")
    for t in range(horizon + 1):
        u = rng.random((count, 2))
        a = (u[:, :1] >= pi_cdf[s]).sum(axis=1)
        states[:, t], actions[:, t] = s, a
        if t < horizon:
            s = (u[:, 1:] >= p_cdf[a * n + s]).sum(axis=1)
    return Demonstrations(states, actions)
