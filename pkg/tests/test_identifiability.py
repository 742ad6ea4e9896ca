import numpy as np
import pytest

from cirl.cmdp import DimensionError, Regularizer, regularizer_gradient, stacked_identity
from cirl.forward import slater_check, solve_rl_constrained, soft_value_iteration
from cirl.gridworld import (GridworldConfig, boundary_states, build_gridworld, expert_weights, features_r1,
                            features_r2)
from cirl.identifiability import (InfeasibleOccupancyError, active_sets, class_reward_in_solution_cone,
                                  generalizability_rank, identify, potential_shaping_distance,
                                  rank_condition, rank_witness_pair, reward_in_solution_cone,
                                  shaping_subspace_basis, shift_matrix)
from cirl.irl import RewardClass

from conftest import example1, example2, random_cmdp

ENT = Regularizer.entropy(1.0)


def brute_rank(a):
    """Rank from the singular values with a fixed relative cut."""
    s = np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)
    return int((s > 1e-9 * s.max()).sum())


def test_active_sets_examples():
    sets = active_sets(example1(), [0.25, 0.75])
    assert sets.safety_active == (0,) and sets.nonneg_active == ()
    sets = active_sets(example1(), [0.5, 0.5])
    assert sets.safety_active == () and sets.nonneg_active == ()
    sets = active_sets(example2(), [0.0, 1.0])
    assert sets.pairs(1) == [(0, 0)]
    assert sets.to_dict(1) == {"safety": [], "nonneg": [[0, 0]]}


def test_active_sets_errors():
    with pytest.raises(InfeasibleOccupancyError):
        active_sets(example1(), [0.1, 0.9])
    with pytest.raises(DimensionError):
        active_sets(example1(), [1.0])


def test_shaping_basis_examples(rng):
    U = shaping_subspace_basis(np.ones((2, 1)), 0.5)
    assert np.allclose(U, [[0.5], [0.5]])
    for _ in range(50):
        c = random_cmdp(rng, n=5, m=3)
        U = shaping_subspace_basis(c.transition, 0.9)
        assert brute_rank(U) == 5
        assert np.allclose(U @ np.ones(5), 0.1 * np.ones(15), atol=1e-14)


def test_cone_membership_example1():
    c = example1()
    mu = [0.25, 0.75]
    assert reward_in_solution_cone(c, mu, [0.0, 2.0], ENT)
    assert not reward_in_solution_cone(c, mu, [2.0, 0.0], ENT)


def test_cone_membership_by_construction(rng):
    for _ in range(10):
        c = random_cmdp(rng)
        mu = soft_value_iteration(c, rng.normal(size=c.nm), 1.0, tol=1e-12).occupancy
        r = regularizer_gradient(mu, ENT, c.n) + c.shaping_matrix() @ rng.normal(size=c.n)
        assert reward_in_solution_cone(c, mu, r, ENT)
        # a generic perturbation leaves the cone
        assert not reward_in_solution_cone(c, mu, r + 0.1 * rng.normal(size=c.nm), ENT)


def test_cone_membership_boundary_entropy_is_false():
    assert not reward_in_solution_cone(example2(), [0.0, 1.0], [0.0, 2.0], ENT)


def test_cone_membership_quadratic_boundary():
    # quadratic solution sits on the boundary with an active nonnegativity constraint
    assert reward_in_solution_cone(example2(), [0.0, 1.0], [0.0, 2.0], Regularizer.quadratic(1.0))
    assert not reward_in_solution_cone(example2(), [0.0, 1.0], [2.0, 0.0], Regularizer.quadratic(1.0))


def _slater_cmdps(rng, count):
    out = []
    while len(out) < count:
        c = random_cmdp(rng, n=4, m=3, k=1)
        if slater_check(c):
            out.append(c)
    return out


def test_soundness_on_forward_solutions(rng):
    for c in _slater_cmdps(rng, 10):
        r = rng.normal(size=c.nm)
        mu = solve_rl_constrained(c, r, 1.0).occupancy
        assert reward_in_solution_cone(c, mu, r, ENT)


def test_completeness_spot_check(rng):
    checked = 0
    for c in _slater_cmdps(rng, 10):
        r = rng.normal(size=c.nm)
        sol = solve_rl_constrained(c, r, 1.0)
        sets = active_sets(c, sol.occupancy, tol=1e-7)
        for _ in range(3):
            shift = c.shaping_matrix() @ rng.normal(size=c.n)
            for i in sets.safety_active:
                shift = shift + rng.uniform(0, 2) * c.psi[:, i]
            mu2 = solve_rl_constrained(c, r + shift, 1.0).occupancy
            assert np.abs(mu2 - sol.occupancy).max() <= 1e-4
            checked += bool(sets.safety_active)
    assert checked > 0


def test_shaping_invariance(rng):
    c = random_cmdp(rng, n=4, m=3, k=1)
    while not slater_check(c):
        c = random_cmdp(rng, n=4, m=3, k=1)
    r = rng.normal(size=c.nm)
    base = solve_rl_constrained(c, r, 1.0).occupancy
    for _ in range(20):
        mu = solve_rl_constrained(c, r + c.shaping_matrix() @ rng.normal(size=c.n), 1.0).occupancy
        assert np.abs(mu - base).max() <= 1e-6


def test_rank_condition_gridworld():
    cfg = GridworldConfig()
    g = build_gridworld(cfg)
    rep1 = rank_condition(RewardClass(features_r1(cfg), "l1", 1.0), g)
    assert (rep1.rank_phi, rep1.rank_xi, rep1.rank_joint) == (20, 38, 58)
    assert rep1.condition_met
    rep2 = rank_condition(RewardClass(features_r2(cfg), "l1", 1.0), g)
    assert (rep2.rank_phi, rep2.rank_xi, rep2.rank_joint) == (36, 38, 71)
    assert not rep2.condition_met
    for rep in (rep1, rep2):
        xi = np.hstack([g.shaping_matrix(), g.psi])
        assert rep.rank_xi == brute_rank(xi)


def test_rank_condition_constant_column():
    c = random_cmdp(np.random.default_rng(0), n=3, m=2)
    assert not rank_condition(np.ones((6, 1)), c).condition_met
    with pytest.raises(DimensionError):
        rank_condition(np.ones((5, 1)), c)


def test_potential_shaping_distance():
    r = np.array([0.3, -1.0, 2.0])
    assert potential_shaping_distance(r + 5, r) == pytest.approx(0.0, abs=1e-14)
    assert potential_shaping_distance([1.0, -1.0], [0.0, 0.0]) == pytest.approx(np.sqrt(2))
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=8), rng.normal(size=8)
    for c in rng.normal(scale=10, size=5):
        assert potential_shaping_distance(a + c, b) == pytest.approx(potential_shaping_distance(a, b))


def test_shift_matrix():
    assert np.array_equal(shift_matrix(3), [[0, 1, 0], [0, 0, 1], [0, 0, 1]])


def test_rank_witness_pair():
    P1, P2 = rank_witness_pair(2, 2)
    assert generalizability_rank(P1, P2, 0.9) == 3
    for n in range(2, 11):
        for m in (2, 3):
            P1, P2 = rank_witness_pair(n, m)
            assert np.array_equal(P1.sum(axis=1), np.ones(n * m))
            assert np.array_equal(P2.sum(axis=1), np.ones(n * m))
            rank = generalizability_rank(P1, P2, 0.9)
            assert rank == 2 * n - 1
            E = stacked_identity(n, m)
            assert rank == brute_rank(np.hstack([E - 0.9 * P1, E - 0.9 * P2]))


def test_generalizability_rank_equal_laws_and_perturbation(rng):
    c = random_cmdp(rng, n=4, m=2)
    assert generalizability_rank(c.transition, c.transition, 0.9) == 4
    W1, W2 = rank_witness_pair(4, 2)
    for _ in range(10):
        A, B = random_cmdp(rng, n=4, m=2).transition, random_cmdp(rng, n=4, m=2).transition
        t = rng.uniform(0.1, 0.9)
        P1, P2 = (1 - t) * A + t * W1, (1 - t) * B + t * W2
        assert generalizability_rank(P1, P2, 0.9) == 7
    with pytest.raises(ValueError):
        generalizability_rank(-c.transition, c.transition, 0.9)
    with pytest.raises(ValueError):
        rank_witness_pair(1, 2)


def test_class_restricted_membership():
    cfg = GridworldConfig()
    g = build_gridworld(cfg)
    mu_e = solve_rl_constrained(g, g.reward, 1.0).occupancy
    rc = RewardClass(features_r1(cfg), "l1", 1.0)
    r_e = rc.reward(expert_weights(cfg, boundary_states(cfg)))
    assert np.allclose(r_e, g.reward)
    # unrestricted membership and class membership agree for a class reward
    assert reward_in_solution_cone(g, mu_e, r_e, ENT)
    assert class_reward_in_solution_cone(g, mu_e, rc, ENT)
    assert not class_reward_in_solution_cone(g, mu_e, RewardClass(rc.phi, "l1", 0.5), ENT)
    with pytest.raises(ValueError):
        class_reward_in_solution_cone(g, mu_e, RewardClass(rc.phi, "l2", 1.0), ENT)


def test_identify_report_json():
    c = example1()
    rep = identify(c, RewardClass(np.eye(2), "l1", 1.0), mu=[0.25, 0.75], r=[0.0, 2.0], reg=ENT)
    d = rep.to_dict()
    assert d["condition_met"] is False  # e_1, e_2 span R^2 and overlap the constraint matrix
    assert d["active_sets"] == {"safety": [0], "nonneg": []}
    assert d["membership"] is True
    assert set(d["ranks"]) == {"phi", "xi", "joint", "shaping"}
