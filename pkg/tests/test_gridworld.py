from fractions import Fraction

import numpy as np
import pytest

from cirl.cmdp import bellman_flow_residual, occupancy_from_policy, uniform_policy
from cirl.forward import slater_check, solve_rl_constrained
from cirl.gridworld import (MOVES, GridworldConfig, boundary_states, build_gridworld, expert_weights,
                            features_r1, features_r2, sample_demonstrations, transition_matrix)


def test_sizes_and_rows_sum_to_one():
    g = build_gridworld()
    assert (g.n, g.m, g.k) == (36, 4, 2)
    assert np.all(g.transition.sum(axis=1) == 1.0)
    assert np.allclose(g.nu0, 1 / 36)


def test_corner_wall_self_transition():
    cfg = GridworldConfig()
    P = transition_matrix(cfg)
    n = cfg.n
    up, down, left, right = range(4)
    s = cfg.cell(0, 0)
    # by hand: up hits the wall, so stay gets 0.9 + slips up and left (2 * 0.025)
    assert P[up * n + s, s] == pytest.approx(0.95, abs=1e-15)
    assert P[up * n + s, cfg.cell(1, 0)] == pytest.approx(0.025, abs=1e-15)
    assert P[up * n + s, cfg.cell(0, 1)] == pytest.approx(0.025, abs=1e-15)
    assert P[right * n + s, cfg.cell(0, 1)] == pytest.approx(0.925, abs=1e-15)
    assert P[right * n + s, s] == pytest.approx(0.05, abs=1e-15)


def test_interior_slip_split():
    cfg = GridworldConfig()
    P = transition_matrix(cfg)
    s = cfg.cell(2, 2)
    row = P[1 * cfg.n + s]  # down
    assert row[cfg.cell(3, 2)] == float(Fraction(9, 10) + Fraction(1, 40))
    for cell in ((1, 2), (2, 1), (2, 3)):
        assert row[cfg.cell(*cell)] == 0.025
    assert np.count_nonzero(row) == 4


def test_deterministic_moves():
    cfg = GridworldConfig(success_prob=1.0)
    P = transition_matrix(cfg)
    s = cfg.cell(2, 3)
    for a, (dr, dc) in enumerate(MOVES):
        assert P[a * cfg.n + s, cfg.cell(2 + dr, 3 + dc)] == 1.0


def test_config_round_trip_and_validation():
    cfg = GridworldConfig(width=4, height=3, reward_cells=[((0, 0), 1.0)],
                          constraint_rects=[[(1, 1)]], b=(0.1,), b_test=(5.0,))
    assert GridworldConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        GridworldConfig(reward_cells=[((7, 0), 1.0)])
    with pytest.raises(ValueError):
        GridworldConfig(b=(0.1,))
    with pytest.raises(ValueError):
        GridworldConfig(success_prob=0.0)


def test_constraint_features_and_thresholds():
    cfg = GridworldConfig()
    g = build_gridworld(cfg)
    assert g.psi.sum(axis=0).tolist() == [8.0, 8.0]
    assert g.psi[cfg.cell(2, 1), 0] == 1.0 and g.psi[3 * cfg.n + cfg.cell(3, 4), 1] == 1.0
    assert np.array_equal(build_gridworld(cfg, test=True).b, [1e3, 1e3])


def test_feature_classes():
    cfg = GridworldConfig()
    assert len(boundary_states(cfg)) == 20
    assert features_r1(cfg).shape == (144, 20) and features_r2(cfg).shape == (144, 36)
    g = build_gridworld(cfg)
    assert np.array_equal(features_r2(cfg) @ expert_weights(cfg), g.reward)
    assert np.array_equal(features_r1(cfg) @ expert_weights(cfg, boundary_states(cfg)), g.reward)
    with pytest.raises(ValueError):
        expert_weights(cfg, [1, 2])


def test_expert_feasibility_and_slater():
    g = build_gridworld()
    assert slater_check(g)
    sol = solve_rl_constrained(g, g.reward, 1.0)
    assert np.all(g.psi.T @ sol.occupancy <= g.b + 1e-8)
    assert bellman_flow_residual(g, sol.occupancy) <= 1e-10
    # both regions bind for the default layout
    assert np.all(sol.dual > 0)


def test_sampling_determinism_and_initial_frequencies():
    g = build_gridworld()
    pi = uniform_policy(g.n, g.m)
    a = sample_demonstrations(g, pi, 10_000, 3, seed=7)
    b = sample_demonstrations(g, pi, 10_000, 3, seed=7)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
    counts = np.bincount(a.states[:, 0], minlength=g.n)
    p = 1 / 36
    sigma = np.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 10_000 * p) <= 3 * sigma + 1)


def test_sampling_deterministic_mdp_gives_identical_trajectories():
    cfg = GridworldConfig(success_prob=1.0)
    g = build_gridworld(cfg)
    g = type(g)(n=g.n, m=g.m, gamma=g.gamma, nu0=np.eye(g.n)[7], transition=g.transition)
    pi = np.zeros((g.n, g.m))
    pi[:, 3] = 1.0
    demos = sample_demonstrations(g, pi, 50, 10, seed=3)
    assert np.all(demos.states == demos.states[0]) and np.all(demos.actions == 3)
    assert demos.states[0].tolist() == [7, 8, 9, 10, 11] + [11] * 6


def test_sampling_errors():
    g = build_gridworld()
    with pytest.raises(ValueError):
        sample_demonstrations(g, uniform_policy(g.n, g.m), 0, 5, seed=0)


def test_uniform_policy_occupancy_on_grid():
    g = build_gridworld()
    mu = occupancy_from_policy(g, uniform_policy(g.n, g.m))
    assert mu.sum() == pytest.approx(1.0, abs=1e-12)
