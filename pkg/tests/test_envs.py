import numpy as np
import pytest

from spi_lab import envs
from spi_lab.losses import exact_losses
from spi_lab.mdp import TabularPolicy, evaluate_policy, stationary_distribution

from oracles import policy_values_by_iteration


def test_fig1_planner_picks_a2():
    spec = envs.build_fig1()
    planned = envs.latent_optimal_policy(spec.latent)
    assert planned.probs[0, 1] == 1.0


def test_fig1_planned_policy_degrades_return():
    spec = envs.build_fig1()
    planned = spec.encoder.compose(envs.latent_optimal_policy(spec.latent))
    mdp = spec.mdp
    j_plan = policy_values_by_iteration(mdp.transition, mdp.reward, planned.probs, mdp.discount)[0]
    j_base = policy_values_by_iteration(mdp.transition, mdp.reward, spec.baseline.probs, mdp.discount)[0]
    assert j_plan < j_base
    assert evaluate_policy(mdp, planned).v[0] < evaluate_policy(mdp, spec.baseline).v[0]


def test_fig1_s3_contribution_negligible():
    spec = envs.build_fig1(epsilon=1e-3)
    xi = stationary_distribution(spec.mdp, spec.baseline).xi
    s3 = spec.extras["regions"][2]
    err = np.abs(spec.mdp.reward - spec.latent.reward[spec.encoder.mapping])
    share = (xi[s3, None] * spec.baseline.probs[s3] * err[s3]).sum()
    assert share < 1e-3 * err.max() * 1 / xi[spec.mdp.reset_state]
    assert exact_losses(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline).l_r < 0.05 * spec.mdp.r_max


def test_fig1_params_validated():
    with pytest.raises(ValueError):
        envs.build_fig1(region_sizes=(3, 0, 4, 3))
    with pytest.raises(ValueError):
        envs.build_fig1(epsilon=0.5)


def test_fig2_structure():
    spec = envs.build_fig2(epsilon=0.1, zeta=1e-4)
    P = spec.mdp.transition
    assert P[0, 0, 1] == pytest.approx(0.9) and P[0, 0, 2] == pytest.approx(0.1)
    assert spec.mdp.reward[1, 1] == 2.0 and spec.mdp.reward[2, 1] == pytest.approx(-20.0)
    assert spec.encoder.mapping[1] == spec.encoder.mapping[2]
    assert np.allclose(spec.baseline_latent.probs[1], (1 - 1e-4, 1e-4))


def test_fig2_merged_values_close():
    spec = envs.build_fig2(zeta=1e-4)
    v = evaluate_policy(spec.mdp, spec.baseline).v
    assert abs(v[1] - v[2]) < 10 * 1e-4 * spec.mdp.r_max / (1 - spec.mdp.discount)


def test_fig2_merged_update_hurts_split_helps():
    spec = envs.build_fig2()
    merged = envs.fig2_merged_update(spec)
    assert merged.probs[1, 1] == 1.0
    mdp = spec.mdp
    j_base = evaluate_policy(mdp, spec.baseline).v[0]
    j_merged = evaluate_policy(mdp, spec.encoder.compose(merged)).v[0]
    j_split = evaluate_policy(mdp, envs.fig2_split_update(spec)).v[0]
    # expected reward one step after s1 is (1 - eps) 2 + eps (-2/eps) = -2 eps, and episodes last 4 steps
    g = mdp.discount
    assert j_merged == pytest.approx(g * -2 * 0.1 / (1 - g**4), rel=1e-12)
    assert j_merged < 0 and j_merged < j_base < j_split


@pytest.mark.parametrize("bad", [dict(epsilon=0.3), dict(zeta=0.2), dict(zeta=0.0)])
def test_fig2_params_validated(bad):
    with pytest.raises(ValueError):
        envs.build_fig2(**bad)


def test_random_episodic_deterministic():
    a = envs.random_episodic(10, 3, seed=123)
    b = envs.random_episodic(10, 3, seed=123)
    assert np.array_equal(a.mdp.transition, b.mdp.transition) and np.array_equal(a.mdp.reward, b.mdp.reward)
    assert np.array_equal(a.encoder.mapping, b.encoder.mapping)
    assert np.array_equal(a.baseline_latent.probs, b.baseline_latent.probs)


def test_random_episodic_invariants():
    for seed in range(300):
        rng = np.random.default_rng(seed)
        spec = envs.random_episodic(int(rng.integers(2, 21)), int(rng.integers(1, 6)), seed=seed)
        mdp = spec.mdp
        assert mdp.reset_state == mdp.n_states - 1
        assert spec.encoder.reset_aligned(mdp)
        assert spec.latent.is_episodic()
        xi = stationary_distribution(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions)).xi
        assert np.all(xi > 0)


def test_random_latent_model():
    lat = envs.random_latent_model(5, 2, seed=0)
    assert lat.n_latent == 5 and np.allclose(lat.transition.sum(axis=2), 1)
