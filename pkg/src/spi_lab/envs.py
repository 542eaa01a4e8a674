"""Environment catalog: the two counterexample MDPs and a random episodic generator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .latent import Encoder, LatentMdp, fit_latent_model
from .mdp import FiniteMdp, TabularPolicy, evaluate_policy, stationary_distribution, value_iteration


@dataclass(frozen=True, eq=False)
class EnvSpec:
    name: str
    params: dict
    mdp: FiniteMdp
    encoder: Encoder
    latent: LatentMdp
    baseline_latent: TabularPolicy
    extras: dict = field(default_factory=dict)

    @property
    def baseline(self) -> TabularPolicy:
        return self.encoder.compose(self.baseline_latent)


def _uniform_over(n_states, idx):
    row = np.zeros(n_states)
    row[idx] = 1.0 / len(idx)
    return row


# ---------------------------------------------------------------- hallucinating world model

FIG1_DEFAULTS = dict(epsilon=1e-3, region_sizes=(3, 3, 4, 3), gamma=0.95, drift=0.5,
                     s3_exit=0.3, s4_exit=0.1, s3_reward=-1.0, s4_reward=1.0, hallucinated_reward=20.0)


def build_fig1(**params) -> EnvSpec:
    """Four-region MDP whose world model hallucinates reward in a rarely visited region.

    Ground states are laid out as S1, S2, S3, S4, reset; actions are a1, a2, a3.
    In S1, a1 drifts to S2 with probability `drift` per step, a2 jumps into S3 and
    a3 stays in S1.  In S2, a3 drifts to S4 and other actions stay.  S3 pays
    `s3_reward` per step and S4 pays `s4_reward`; each leaves to the reset state
    with its own exit probability.  The encoder maps each region to one latent,
    except S3 whose second half maps to a separate latent s3'.  The latent model
    is fitted under the baseline and then corrupted at s3'.
    """
    p = {**FIG1_DEFAULTS, **params}
    eps = float(p["epsilon"])
    sizes = tuple(int(k) for k in p["region_sizes"])
    if not 0 < eps < 1 / 3:
        raise ValueError("epsilon must lie in (0, 1/3)")
    if len(sizes) != 4 or min(sizes) < 1 or sizes[2] < 2:
        raise ValueError("need four nonempty regions, with at least two states in S3")
    for key in ("drift", "s3_exit", "s4_exit"):
        if not 0 < p[key] <= 1:
            raise ValueError(f"{key} must lie in (0, 1]")
    bounds = np.cumsum((0,) + sizes)
    regions = [np.arange(bounds[i], bounds[i + 1]) for i in range(4)]
    S1, S2, S3, S4 = regions
    n = int(bounds[-1]) + 1
    reset = n - 1
    P = np.zeros((n, 3, n))
    R = np.zeros((n, 3))
    u = {i: _uniform_over(n, r) for i, r in enumerate(regions, start=1)}
    q = p["drift"]
    for s in S1:
        P[s, 0] = q * u[2] + (1 - q) * u[1]
        P[s, 1] = u[3]
        P[s, 2] = u[1]
    for s in S2:
        P[s, 0] = u[2]
        P[s, 1] = u[2]
        P[s, 2] = q * u[4] + (1 - q) * u[2]
    exit_row = np.zeros(n)
    exit_row[reset] = 1.0
    for s in S3:
        P[s, :] = p["s3_exit"] * exit_row + (1 - p["s3_exit"]) * u[3]
        R[s, :] = p["s3_reward"]
    for s in S4:
        P[s, :] = p["s4_exit"] * exit_row + (1 - p["s4_exit"]) * u[4]
        R[s, :] = p["s4_reward"]
    P[reset, :, 0] = 1.0
    mdp = FiniteMdp(P, R, 0, p["gamma"], reset)

    half = sizes[2] // 2
    mapping = np.empty(n, dtype=int)
    mapping[S1], mapping[S2] = 0, 1
    mapping[S3[:half]], mapping[S3[half:]] = 2, 3
    mapping[S4], mapping[reset] = 4, 5
    encoder = Encoder(mapping, 6)

    base = np.full((6, 3), 1.0 / 3)
    base[0] = (1 - 2 * eps, eps, eps)
    base[1] = (eps, eps, 1 - 2 * eps)
    baseline_latent = TabularPolicy(base)
    xi = stationary_distribution(mdp, encoder.compose(baseline_latent))
    faithful = fit_latent_model(mdp, encoder, xi)
    bad_reward = np.array(faithful.reward)
    bad_reward[3, :] = p["hallucinated_reward"]
    latent = faithful.replace(reward=bad_reward)
    return EnvSpec("fig1", p, mdp, encoder, latent, baseline_latent,
                   extras=dict(faithful_latent=faithful, regions=regions))


def latent_optimal_policy(latent: LatentMdp) -> TabularPolicy:
    _, greedy = value_iteration(latent.as_mdp())
    return greedy


# ---------------------------------------------------------------- merged states

FIG2_DEFAULTS = dict(epsilon=0.1, zeta=1e-4, gamma=0.9)


def build_fig2(**params) -> EnvSpec:
    """Five-state MDP (s1, s2, s3, s4, reset) where merging s2 and s3 confounds updates.

    s1 moves to s2 with probability 1 - epsilon and to s3 otherwise.  In s2 and s3
    both actions lead to s4; a2 pays +2 in s2 and -2/epsilon in s3, a1 pays 0.
    s4 leads to the reset state, which restarts at s1.  The encoder merges s2
    and s3; the baseline plays a2 with probability zeta in the merged latent.
    """
    p = {**FIG2_DEFAULTS, **params}
    eps, zeta = float(p["epsilon"]), float(p["zeta"])
    if not 0 < eps < 0.25:
        raise ValueError("epsilon must lie in (0, 1/4)")
    if not 0 < zeta < eps:
        raise ValueError("zeta must lie in (0, epsilon)")
    P = np.zeros((5, 2, 5))
    R = np.zeros((5, 2))
    P[0, :, 1] = 1 - eps
    P[0, :, 2] = eps
    P[1, :, 3] = 1.0
    P[2, :, 3] = 1.0
    R[1, 1] = 2.0
    R[2, 1] = -2.0 / eps
    P[3, :, 4] = 1.0
    P[4, :, 0] = 1.0
    mdp = FiniteMdp(P, R, 0, p["gamma"], 4)
    encoder = Encoder(np.array([0, 1, 1, 2, 3]), 4)
    base = np.full((4, 2), 0.5)
    base[1] = (1 - zeta, zeta)
    baseline_latent = TabularPolicy(base)
    xi = stationary_distribution(mdp, encoder.compose(baseline_latent))
    latent = fit_latent_model(mdp, encoder, xi)
    split = Encoder(np.arange(5), 5)
    return EnvSpec("fig2", p, mdp, encoder, latent, baseline_latent,
                   extras=dict(split_encoder=split))


def fig2_merged_update(spec: EnvSpec) -> TabularPolicy:
    """Latent update that trusts the block's dominant ground state.

    In each latent block the update plays the greedy action (w.r.t. the baseline's
    ground Q-values) of the block member with the largest stationary mass.  For the
    merged block this is s2, so the update deterministically plays a2 there.
    """
    mdp, enc = spec.mdp, spec.encoder
    baseline = spec.baseline
    q = evaluate_policy(mdp, baseline).q
    xi = stationary_distribution(mdp, baseline).xi
    actions = np.zeros(enc.n_latent, dtype=int)
    for z in range(enc.n_latent):
        members = np.flatnonzero(enc.mapping == z)
        top = members[np.argmax(xi[members])]
        actions[z] = int(np.argmax(q[top]))
    return TabularPolicy.deterministic(actions, mdp.n_actions)


def fig2_split_update(spec: EnvSpec) -> TabularPolicy:
    """Greedy update on the baseline's ground Q-values with s2 and s3 kept apart."""
    q = evaluate_policy(spec.mdp, spec.baseline).q
    return TabularPolicy.deterministic(q.argmax(axis=1), spec.mdp.n_actions)


# ---------------------------------------------------------------- random suite

def random_episodic(n_states: int, n_actions: int, seed: int, branching: int = 3, gamma: float = 0.9,
                    n_latent=None, term_range=(0.05, 0.3), max_repairs: int = 1000) -> EnvSpec:
    """Random ergodic episodic MDP plus encoder, fitted latent model and baseline.

    The last state is the reset state and state 0 is initial.  Every non-reset
    (s, a) moves to `branching` random states with Dirichlet weights, mixed with a
    random termination probability into the reset state, so the reset is hit under
    every policy.  States unreachable from the initial state are wired in, which
    makes the union support graph strongly connected.
    """
    if not 2 <= n_states <= 64 or n_actions < 1:
        raise ValueError("need 2..64 states and at least one action")
    rng = np.random.default_rng(seed)
    n = n_states
    reset = n - 1
    P = np.zeros((n, n_actions, n))
    for s in range(reset):
        for a in range(n_actions):
            k = min(branching, n)
            nxt = rng.choice(n, size=k, replace=False)
            P[s, a, nxt] = rng.dirichlet(np.ones(k))
            term = rng.uniform(*term_range)
            P[s, a] *= 1 - term
            P[s, a, reset] += term
    P[reset, :, 0] = 1.0
    for _ in range(max_repairs):
        reach = _reachable(P, 0)
        missing = np.flatnonzero(~reach)
        if len(missing) == 0:
            break
        src = rng.choice(np.flatnonzero(reach[:reset]))
        a = rng.integers(n_actions)
        w = rng.uniform(0.05, 0.5)
        P[src, a] *= 1 - w
        P[src, a, missing[0]] += w
    else:
        raise RuntimeError("ergodicity repair exceeded its retry budget")
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1, 1, size=(n, n_actions))
    R[reset] = 0.0
    mdp = FiniteMdp(P, R, 0, gamma, reset)

    if n_latent is None:
        n_latent = int(rng.integers(2, n + 1))
    n_latent = int(min(max(n_latent, 2), n))
    # the reset gets its own latent; the other states are spread surjectively
    mapping = np.empty(n, dtype=int)
    mapping[reset] = n_latent - 1
    order = rng.permutation(reset)
    mapping[order[: n_latent - 1]] = np.arange(n_latent - 1)
    mapping[order[n_latent - 1:]] = rng.integers(0, n_latent - 1, size=reset - (n_latent - 1))
    encoder = Encoder(mapping, n_latent)
    base = rng.dirichlet(np.full(n_actions, 2.0), size=n_latent)
    base = 0.8 * base + 0.2 / n_actions
    baseline_latent = TabularPolicy(base / base.sum(axis=1, keepdims=True))
    xi = stationary_distribution(mdp, encoder.compose(baseline_latent))
    latent = fit_latent_model(mdp, encoder, xi)
    params = dict(n_states=n_states, n_actions=n_actions, seed=seed, branching=branching, gamma=gamma,
                  n_latent=n_latent)
    return EnvSpec("random", params, mdp, encoder, latent, baseline_latent)


def _reachable(P: np.ndarray, start: int) -> np.ndarray:
    adj = P.sum(axis=1) > 0
    seen = np.zeros(len(adj), dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = nxt.tolist()
    return seen


def random_latent_model(n_latent: int, n_actions: int, seed: int, gamma: float = 0.9,
                        branching: int = 3) -> LatentMdp:
    """Random latent MDP with discrete metric (no reset structure)."""
    rng = np.random.default_rng(seed)
    P = np.zeros((n_latent, n_actions, n_latent))
    for z in range(n_latent):
        for a in range(n_actions):
            k = min(branching, n_latent)
            nxt = rng.choice(n_latent, size=k, replace=False)
            P[z, a, nxt] = rng.dirichlet(np.ones(k))
    R = rng.uniform(-1, 1, size=(n_latent, n_actions))
    return LatentMdp(P, R, 0, gamma, 1.0 - np.eye(n_latent))
