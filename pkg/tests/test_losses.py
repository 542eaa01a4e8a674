import numpy as np
import pytest

from spi_lab import envs
from spi_lab.latent import Encoder, LatentMdp, fit_latent_model
from spi_lab.losses import crude_transition_bound, empirical_losses, exact_losses
from spi_lab.mdp import FiniteMdp, StationaryDist, TabularPolicy, TransitionBatch, sample_transitions, \
    stationary_distribution

from oracles import random_mdp


def ground_as_latent(mdp, shift=0.0):
    return LatentMdp(mdp.transition, mdp.reward + shift, mdp.initial_state, mdp.discount,
                     1 - np.eye(mdp.n_states))


def random_triple(rng):
    n, k = int(rng.integers(2, 9)), int(rng.integers(1, 4))
    P, R = random_mdp(rng, n, k, sparse=True)
    mdp = FiniteMdp(P, R, 0, 0.9)
    m = int(rng.integers(1, n + 1))
    mapping = rng.permutation(np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)]))
    enc = Encoder(mapping, m)
    LP = rng.dirichlet(np.ones(m), size=(m, k))
    pts = rng.random((m, 2))
    D = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1) if rng.random() < 0.5 else 1 - np.eye(m)
    lat = LatentMdp(LP, rng.uniform(-1, 1, (m, k)), 0, 0.9, D)
    w = StationaryDist(rng.dirichlet(np.ones(n)))
    pol = TabularPolicy(rng.dirichlet(np.ones(k), size=n))
    return mdp, enc, lat, w, pol


def test_exact_abstraction_zero():
    rng = np.random.default_rng(0)
    P, R = random_mdp(rng, 5, 2)
    mdp = FiniteMdp(P, R, 0, 0.9)
    rep = exact_losses(mdp, Encoder.identity(5), ground_as_latent(mdp), StationaryDist(np.full(5, 0.2)),
                       TabularPolicy.uniform(5, 2))
    assert rep.l_r == 0 and rep.l_p == 0


def test_constant_reward_shift():
    rng = np.random.default_rng(1)
    P, R = random_mdp(rng, 5, 2)
    mdp = FiniteMdp(P, R, 0, 0.9)
    rep = exact_losses(mdp, Encoder.identity(5), ground_as_latent(mdp, -0.37), StationaryDist(np.full(5, 0.2)),
                       TabularPolicy.uniform(5, 2))
    assert rep.l_r == pytest.approx(0.37, abs=1e-14)


def test_fig1_losses_negligible():
    spec = envs.build_fig1(epsilon=1e-3)
    xi = stationary_distribution(spec.mdp, spec.baseline)
    rep = exact_losses(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline)
    assert rep.l_r < 0.05 * spec.mdp.r_max


def test_crude_bound_examples():
    # deterministic 3-cycle modelled exactly
    P = np.zeros((3, 1, 3))
    for s in range(3):
        P[s, 0, (s + 1) % 3] = 1
    mdp = FiniteMdp(P, np.zeros((3, 1)), 0, 0.9)
    w, pol = StationaryDist(np.full(3, 1 / 3)), TabularPolicy.uniform(3, 1)
    lat = ground_as_latent(mdp)
    assert crude_transition_bound(mdp, Encoder.identity(3), lat, w, pol) == 0
    assert exact_losses(mdp, Encoder.identity(3), lat, w, pol).l_p == 0
    # point-mass mismatch at distance 1
    wrong = lat.replace(transition=np.roll(P, 1, axis=2))
    assert crude_transition_bound(mdp, Encoder.identity(3), wrong, w, pol) == 1.0
    assert exact_losses(mdp, Encoder.identity(3), wrong, w, pol).l_p == 1.0


def test_crude_bound_dominates():
    rng = np.random.default_rng(2)
    strict = False
    for _ in range(200):
        mdp, enc, lat, w, pol = random_triple(rng)
        lp = exact_losses(mdp, enc, lat, w, pol).l_p
        crude = crude_transition_bound(mdp, enc, lat, w, pol)
        assert crude >= lp - 1e-12
        strict |= crude > lp + 1e-6
    assert strict


def test_empirical_errors_and_perfect_model():
    spec = envs.build_fig2()
    empty = TransitionBatch(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0, int))
    with pytest.raises(ValueError):
        empirical_losses(empty, spec.encoder, spec.latent)
    P = np.zeros((3, 1, 3))
    for s in range(3):
        P[s, 0, (s + 1) % 3] = 1
    mdp = FiniteMdp(P, np.array([[1.0], [0.0], [-1.0]]), 0, 0.9)
    b = sample_transitions(mdp, TabularPolicy.uniform(3, 1), 500, seed=0)
    rep = empirical_losses(b, Encoder.identity(3), ground_as_latent(mdp))
    assert rep.l_r == 0 and rep.l_p == 0 and rep.sample_count == 500


def _hoeffding_check(spec, T, seed):
    xi = stationary_distribution(spec.mdp, spec.baseline)
    b = sample_transitions(spec.mdp, spec.baseline, T, seed=seed)
    emp = empirical_losses(b, spec.encoder, spec.latent)
    l_r = exact_losses(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline).l_r
    crude = crude_transition_bound(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline)
    range_r = 2 * max(spec.mdp.r_max, np.abs(spec.latent.reward).max())
    return abs(emp.l_r - l_r), abs(emp.l_p - crude), range_r


def test_empirical_fig2_within_hoeffding():
    spec = envs.build_fig2()
    T = 10**5
    err_r, err_p, range_r = _hoeffding_check(spec, T, 0)
    assert err_r <= 3 * range_r / (2 * np.sqrt(T))
    assert err_p <= 3 / (2 * np.sqrt(T))


def test_empirical_error_shrinks_with_t():
    spec = envs.random_episodic(8, 3, seed=4, n_latent=4)
    errs = []
    for k in range(4):
        T = 4**k * 1000
        e = [_hoeffding_check(spec, T, seed)[1] for seed in range(20)]
        errs.append(np.sqrt(np.mean(np.square(e))))
    # RMS error scales like T^{-1/2}: each factor-4 step roughly halves it
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 1.2) and np.all(ratios < 3.5)
    assert errs[-1] * np.sqrt(64 * 1000) < 1.0


def test_empirical_l_p_above_exact_for_stochastic_dynamics():
    spec = envs.random_episodic(10, 3, seed=6, n_latent=4)
    xi = stationary_distribution(spec.mdp, spec.baseline)
    exact = exact_losses(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline)
    crude = crude_transition_bound(spec.mdp, spec.encoder, spec.latent, xi, spec.baseline)
    assert crude >= exact.l_p
    emp = empirical_losses(sample_transitions(spec.mdp, spec.baseline, 10**5, seed=1), spec.encoder, spec.latent)
    assert abs(emp.l_p - crude) < 3 / (2 * np.sqrt(10**5))
