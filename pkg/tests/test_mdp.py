import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spi_lab import envs
from spi_lab.mdp import (FiniteMdp, StationaryDist, TabularPolicy, average_episode_length, bellman_residual,
                         chain_stationary, discounted_occupancy, evaluate_policy, restart_chain, sample_transitions,
                         simulate_episode_lengths, stationary_distribution, value_iteration)

from oracles import (occupancy_by_series, optimal_values_by_iteration, policy_values_by_iteration, random_mdp,
                     stationary_by_power)


def one_state(reward=1.0, gamma=0.5):
    return FiniteMdp(np.ones((1, 1, 1)), np.full((1, 1), reward), 0, gamma)


# ---- construction invariants

def test_rejects_bad_rows():
    P = np.array([[[0.5, 0.6]], [[0.0, 1.0]]])
    with pytest.raises(ValueError, match="sum to 1"):
        FiniteMdp(P, np.zeros((2, 1)), 0, 0.9)


def test_rejects_negative_probability():
    P = np.array([[[1.2, -0.2]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        FiniteMdp(P, np.zeros((2, 1)), 0, 0.9)


def test_reset_must_restart_with_zero_reward():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1
    P[1, 0, 0] = 1
    R = np.zeros((2, 1))
    FiniteMdp(P, R, 0, 0.9, reset_state=1)
    R[1, 0] = 1
    with pytest.raises(ValueError, match="zero reward"):
        FiniteMdp(P, R, 0, 0.9, reset_state=1)
    P2 = P.copy()
    P2[1, 0] = (0, 1)
    with pytest.raises(ValueError, match="initial state"):
        FiniteMdp(P2, np.zeros((2, 1)), 0, 0.9, reset_state=1)


def test_r_max_and_arrays_frozen():
    mdp = FiniteMdp(np.ones((1, 2, 1)), np.array([[-3.0, 2.0]]), 0, 0.9)
    assert mdp.r_max == 3.0
    with pytest.raises(ValueError):
        mdp.reward[0, 0] = 1.0


def test_policy_invariants():
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.4]]))
    assert np.array_equal(TabularPolicy.deterministic([1, 0], 2).support(), [[False, True], [True, False]])


# ---- evaluate_policy

def test_single_state_geometric_series():
    v = evaluate_policy(one_state(), TabularPolicy.uniform(1, 1)).v
    assert v[0] == pytest.approx(2.0, abs=1e-15)


def test_zero_rewards_give_zero_tables():
    rng = np.random.default_rng(0)
    P, _ = random_mdp(rng, 5, 3)
    mdp = FiniteMdp(P, np.zeros((5, 3)), 0, 0.9)
    vt = evaluate_policy(mdp, TabularPolicy.uniform(5, 3))
    assert np.all(vt.v == 0) and np.all(vt.adv == 0)


def test_fig2_merged_states_look_alike():
    spec = envs.build_fig2(epsilon=0.1, zeta=1e-4)
    v = evaluate_policy(spec.mdp, spec.baseline).v
    oracle = policy_values_by_iteration(spec.mdp.transition, spec.mdp.reward, spec.baseline.probs, 0.9)
    assert np.allclose(v, oracle, atol=1e-10)
    assert abs(v[1] - v[2]) < 0.01


def test_bellman_residual_and_advantage_invariants():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n, k = int(rng.integers(1, 21)), int(rng.integers(1, 6))
        P, R = random_mdp(rng, n, k, sparse=True)
        mdp = FiniteMdp(P, R, 0, float(rng.choice([0.5, 0.9, 0.99])))
        pol = TabularPolicy(rng.dirichlet(np.ones(k), size=n))
        vt = evaluate_policy(mdp, pol)
        assert bellman_residual(mdp, pol, vt.v) <= 1e-10
        assert np.array_equal(vt.adv, vt.q - vt.v[:, None])
        assert np.abs((pol.probs * vt.adv).sum(axis=1)).max() <= 1e-9


def test_values_match_iteration_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        P, R = random_mdp(rng, 7, 3)
        pol = TabularPolicy(rng.dirichlet(np.ones(3), size=7))
        mdp = FiniteMdp(P, R, 0, 0.95)
        assert np.allclose(evaluate_policy(mdp, pol).v, policy_values_by_iteration(P, R, pol.probs, 0.95), atol=1e-9)


def test_episodic_masking_zeroes_reset():
    spec = envs.random_episodic(6, 2, seed=5)
    vt = evaluate_policy(spec.mdp, spec.baseline, episodic_masking=True)
    r = spec.mdp.reset_state
    assert vt.v[r] == 0 and np.all(vt.q[r] == 0)
    # away from the reset the masked backup still holds
    P_pi = np.einsum("sa,sat->st", spec.baseline.probs, spec.mdp.transition)
    r_pi = (spec.baseline.probs * spec.mdp.reward).sum(axis=1)
    resid = r_pi + 0.9 * P_pi @ vt.v - vt.v
    assert np.abs(np.delete(resid, r)).max() < 1e-10
    with pytest.raises(ValueError):
        evaluate_policy(one_state(), TabularPolicy.uniform(1, 1), episodic_masking=True)


def test_value_iteration_matches_oracle():
    rng = np.random.default_rng(3)
    for gamma in (0.5, 0.9, 0.99):
        P, R = random_mdp(rng, 10, 4)
        v, greedy = value_iteration(FiniteMdp(P, R, 0, gamma))
        assert np.allclose(v, optimal_values_by_iteration(P, R, gamma), atol=1e-9)
        assert np.allclose(evaluate_policy(FiniteMdp(P, R, 0, gamma), greedy).v, v, atol=1e-9)


# ---- stationary distribution

def test_swap_chain_and_single_state():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1
    xi = stationary_distribution(FiniteMdp(P, np.zeros((2, 1)), 0, 0.9), TabularPolicy.uniform(2, 1)).xi
    assert np.allclose(xi, [0.5, 0.5], atol=1e-15)
    assert stationary_distribution(one_state(), TabularPolicy.uniform(1, 1)).xi.tolist() == [1.0]


def test_fig2_stationary_matches_power_iteration():
    spec = envs.build_fig2(epsilon=0.1, zeta=0.01)
    xi = stationary_distribution(spec.mdp, spec.baseline).xi
    P_pi = np.einsum("sa,sat->st", spec.baseline.probs, spec.mdp.transition)
    assert np.allclose(xi, stationary_by_power(P_pi), atol=1e-12)
    assert xi[2] == pytest.approx(0.1 * xi[0], rel=1e-12)


def test_stationary_fixed_point_random():
    rng = np.random.default_rng(4)
    for _ in range(50):
        P, R = random_mdp(rng, int(rng.integers(2, 15)), 3, sparse=True)
        pol = TabularPolicy(rng.dirichlet(np.ones(3), size=P.shape[0]))
        P_pi = np.einsum("sa,sat->st", pol.probs, P)
        try:
            xi = stationary_distribution(FiniteMdp(P, R, 0, 0.9), pol).xi
        except ValueError:
            continue
        assert np.abs(xi @ P_pi - xi).max() <= 1e-9
        assert np.allclose(xi, stationary_by_power(P_pi), atol=1e-9)


def test_stationary_matches_long_run_frequencies():
    spec = envs.random_episodic(8, 3, seed=9)
    xi = stationary_distribution(spec.mdp, spec.baseline).xi
    P_pi = np.einsum("sa,sat->st", spec.baseline.probs, spec.mdp.transition)
    cdf = np.cumsum(P_pi, axis=1)
    rng = np.random.default_rng(0)
    u = rng.random(10**6)
    counts = np.zeros(len(xi))
    s = 0
    for x in u:
        s = min(int(np.searchsorted(cdf[s], x, side="right")), len(xi) - 1)
        counts[s] += 1
    assert 0.5 * np.abs(counts / counts.sum() - xi).sum() < 5e-3


def test_multiple_closed_classes_rejected():
    P = np.eye(3)
    with pytest.raises(ValueError, match="not unique"):
        chain_stationary(P)


# ---- discounted occupancy

def test_occupancy_trivial_cases():
    assert discounted_occupancy(one_state(), TabularPolicy.uniform(1, 1)).xi.tolist() == [1.0]
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1
    mu = discounted_occupancy(FiniteMdp(P, np.zeros((2, 1)), 0, 0.5), TabularPolicy.uniform(2, 1)).xi
    assert np.allclose(mu, [0.5, 0.5], atol=1e-15)


def test_occupancy_series_oracle():
    rng = np.random.default_rng(7)
    P, R = random_mdp(rng, 6, 2)
    pol = TabularPolicy(rng.dirichlet(np.ones(2), size=6))
    mdp = FiniteMdp(P, R, 0, 0.9)
    P_pi = np.einsum("sa,sat->st", pol.probs, P)
    assert np.allclose(discounted_occupancy(mdp, pol).xi, occupancy_by_series(P_pi, 0, 0.9), atol=1e-8)


def test_occupancy_is_stationary_of_restart_chain():
    rng = np.random.default_rng(8)
    for _ in range(30):
        P, R = random_mdp(rng, int(rng.integers(2, 12)), 3, sparse=True)
        pol = TabularPolicy(rng.dirichlet(np.ones(3), size=P.shape[0]))
        mdp = FiniteMdp(P, R, 0, 0.9)
        mu = discounted_occupancy(mdp, pol).xi
        assert np.allclose(mu, chain_stationary(restart_chain(mdp, pol)), atol=1e-9)


# ---- average episode length

def cycle_with_reset(k):
    """Deterministic k-cycle whose last state is the reset."""
    P = np.zeros((k, 1, k))
    for s in range(k):
        P[s, 0, (s + 1) % k] = 1
    return FiniteMdp(P, np.zeros((k, 1)), 0, 0.9, reset_state=k - 1)


def test_ael_deterministic_cycle():
    assert average_episode_length(cycle_with_reset(3), TabularPolicy.uniform(3, 1)) == pytest.approx(3.0, abs=1e-12)


def test_ael_geometric_termination():
    # s0 enters the reset state with probability p per step; the reset restarts at s0
    p = 0.25
    P = np.zeros((2, 1, 2))
    P[0, 0] = (1 - p, p)
    P[1, 0, 0] = 1
    mdp = FiniteMdp(P, np.zeros((2, 1)), 0, 0.9, reset_state=1)
    assert average_episode_length(mdp, TabularPolicy.uniform(2, 1)) == pytest.approx(1 + 1 / p, abs=1e-12)
    # a pure restart kernel with restart probability p has mean time 1/p between restarts
    K = np.array([[1 - p, p], [1 - p, p]])
    assert 1 / chain_stationary(K)[1] == pytest.approx(1 / p, abs=1e-12)


def test_ael_times_reset_mass_is_one():
    for seed in range(40):
        spec = envs.random_episodic(int(3 + seed % 10), 3, seed=seed)
        xi = stationary_distribution(spec.mdp, spec.baseline).xi
        assert average_episode_length(spec.mdp, spec.baseline) * xi[spec.mdp.reset_state] == pytest.approx(1, abs=1e-9)


def test_ael_fig1_monte_carlo():
    spec = envs.build_fig1()
    ael = average_episode_length(spec.mdp, spec.baseline)
    lengths = simulate_episode_lengths(spec.mdp, spec.baseline, 10**5, seed=0)
    se = lengths.std(ddof=1) / np.sqrt(len(lengths))
    assert abs(lengths.mean() - ael) <= 3 * se


def test_ael_needs_reset():
    with pytest.raises(ValueError):
        average_episode_length(one_state(), TabularPolicy.uniform(1, 1))


# ---- sampling

def test_sample_transitions_trivial():
    assert len(sample_transitions(one_state(), TabularPolicy.uniform(1, 1), 0, seed=0)) == 0
    b = sample_transitions(one_state(reward=0.7), TabularPolicy.uniform(1, 1), 50, seed=0)
    assert np.all(b.s == 0) and np.all(b.a == 0) and np.all(b.r == 0.7) and np.all(b.s_next == 0)


def test_sample_transitions_frequencies_fig2():
    spec = envs.build_fig2()
    xi = stationary_distribution(spec.mdp, spec.baseline).xi
    b = sample_transitions(spec.mdp, spec.baseline, 10**6, seed=1)
    freq = np.bincount(b.s, minlength=5) / len(b)
    assert 0.5 * np.abs(freq - xi).sum() < 1e-2


def test_sample_transitions_deterministic_per_seed():
    spec = envs.build_fig2()
    a = sample_transitions(spec.mdp, spec.baseline, 1000, seed=3)
    b = sample_transitions(spec.mdp, spec.baseline, 1000, seed=3)
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("s", "a", "r", "s_next"))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1), st.floats(0.0, 0.99))
def test_property_evaluation_is_bellman_fixed_point(n, k, seed, gamma):
    rng = np.random.default_rng(seed)
    P, R = random_mdp(rng, n, k)
    pol = TabularPolicy(rng.dirichlet(np.ones(k), size=n))
    mdp = FiniteMdp(P, R, 0, gamma)
    vt = evaluate_policy(mdp, pol)
    assert bellman_residual(mdp, pol, vt.v) <= 1e-10 * max(1.0, np.abs(vt.v).max())
    mu = discounted_occupancy(mdp, pol)
    assert isinstance(mu, StationaryDist)
