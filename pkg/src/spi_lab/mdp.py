"""Finite MDPs: exact policy evaluation, stationary measures, episode statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

PROB_TOL = 1e-12


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def check_stochastic(rows: np.ndarray, what: str, tol: float = PROB_TOL) -> None:
    if np.any(~np.isfinite(rows)):
        raise ValueError(f"{what}: non-finite entries")
    if np.any(rows < 0):
        raise ValueError(f"{what}: negative probabilities")
    dev = np.abs(rows.sum(axis=-1) - 1.0)
    if dev.size and dev.max() > tol:
        raise ValueError(f"{what}: rows do not sum to 1 (max deviation {dev.max():.3e})")


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    initial_state: int
    discount: float
    reset_state: Optional[int] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape}")
        check_stochastic(P, "transition")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward: non-finite entries")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        n = P.shape[0]
        if not 0 <= self.initial_state < n:
            raise ValueError("initial_state out of range")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "discount", float(self.discount))
        if self.reset_state is not None:
            r = int(self.reset_state)
            if not 0 <= r < n:
                raise ValueError("reset_state out of range")
            if np.any(R[r] != 0):
                raise ValueError("reset state must have zero reward")
            if np.any(P[r, :, self.initial_state] != 1.0):
                raise ValueError("reset state must move to the initial state with probability 1")
            object.__setattr__(self, "reset_state", r)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.abs(self.reward).max()) if self.reward.size else 0.0

    @property
    def episodic(self) -> bool:
        return self.reset_state is not None


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ValueError("policy probs must be a (S, A) matrix")
        check_stochastic(p, "policy")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def support(self) -> np.ndarray:
        return self.probs > 0

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)


@dataclass(frozen=True, eq=False)
class ValueTables:
    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray


@dataclass(frozen=True, eq=False)
class StationaryDist:
    xi: np.ndarray

    def __post_init__(self):
        xi = _frozen(self.xi)
        if np.any(xi < 0) or abs(xi.sum() - 1.0) > PROB_TOL:
            raise ValueError("stationary distribution must be a probability vector")
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def __post_init__(self):
        s = _frozen(self.s, int)
        a = _frozen(self.a, int)
        r = _frozen(self.r)
        sn = _frozen(self.s_next, int)
        if not (s.shape == a.shape == r.shape == sn.shape) or s.ndim != 1:
            raise ValueError("batch columns must be 1-d arrays of equal length")
        for name, val in (("s", s), ("a", a), ("r", r), ("s_next", sn)):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.s)


def _check_pair(mdp: FiniteMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match mdp "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def induced_chain(mdp: FiniteMdp, policy: TabularPolicy):
    """State-to-state kernel P_pi and expected reward r_pi."""
    _check_pair(mdp, policy)
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return P_pi, r_pi


def evaluate_policy(mdp: FiniteMdp, policy: TabularPolicy, episodic_masking: bool = False) -> ValueTables:
    """Exact V, Q and advantages by a dense linear solve.

    With masking the reset state is treated as terminal: V(reset) = 0 and
    Q(reset, .) = 0, while every other state keeps the usual Bellman backup.
    """
    P_pi, r_pi = induced_chain(mdp, policy)
    n = mdp.n_states
    gamma = mdp.discount
    A = np.eye(n) - gamma * P_pi
    b = r_pi.copy()
    if episodic_masking:
        if mdp.reset_state is None:
            raise ValueError("episodic masking needs a reset state")
        A[mdp.reset_state] = 0.0
        A[mdp.reset_state, mdp.reset_state] = 1.0
        b[mdp.reset_state] = 0.0
    v = np.linalg.solve(A, b)
    q = mdp.reward + gamma * mdp.transition @ v
    if episodic_masking:
        q[mdp.reset_state] = 0.0
    return ValueTables(v=v, q=q, adv=q - v[:, None])


def bellman_residual(mdp: FiniteMdp, policy: TabularPolicy, v: np.ndarray) -> float:
    P_pi, r_pi = induced_chain(mdp, policy)
    return float(np.abs(r_pi + mdp.discount * P_pi @ v - v).max())


def value_iteration(mdp: FiniteMdp, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Optimal values by value iteration; returns (v_star, greedy TabularPolicy).

    Stops once the sup-norm change guarantees ||v - v*|| <= tol.
    """
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    stop = tol * (1 - gamma) / max(gamma, 1e-300)
    for _ in range(max_iter):
        v_new = (mdp.reward + gamma * mdp.transition @ v).max(axis=1)
        delta = np.abs(v_new - v).max()
        v = v_new
        # below a few ulps of |v| the updates are rounding noise
        if delta <= max(stop, 8 * np.finfo(float).eps * np.abs(v).max()):
            break
    else:
        raise RuntimeError("value iteration did not converge")
    q = mdp.reward + gamma * mdp.transition @ v
    return v, TabularPolicy.deterministic(q.argmax(axis=1), mdp.n_actions)


def communicating_classes(P_pi: np.ndarray):
    """Strongly connected classes of the support graph and which are closed."""
    adj = P_pi > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        leaves = adj[members][:, ~members].any()
        closed.append(not leaves)
    classes = [np.flatnonzero(labels == c) for c in range(n_comp)]
    return classes, np.array(closed)


def chain_stationary(P: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix with one closed class."""
    classes, closed = communicating_classes(P)
    closed_ids = np.flatnonzero(closed)
    if len(closed_ids) != 1:
        names = "; ".join(str(classes[i].tolist()) for i in closed_ids)
        raise ValueError(
            f"stationary distribution is not unique: {len(closed_ids)} closed "
            f"communicating classes ({names})"
        )
    members = classes[closed_ids[0]]
    sub = P[np.ix_(members, members)]
    k = len(members)
    M = sub.T - np.eye(k)
    M[-1] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    xi_sub = np.linalg.solve(M, rhs)
    xi_sub = np.clip(xi_sub, 0.0, None)
    xi = np.zeros(P.shape[0])
    xi[members] = xi_sub / xi_sub.sum()
    return xi


def stationary_distribution(mdp: FiniteMdp, policy: TabularPolicy) -> StationaryDist:
    P_pi, _ = induced_chain(mdp, policy)
    return StationaryDist(chain_stationary(P_pi))


def discounted_occupancy(mdp: FiniteMdp, policy: TabularPolicy) -> StationaryDist:
    """mu(s) = (1 - gamma) sum_t gamma^t P(s_t = s | s_0 = s_I)."""
    P_pi, _ = induced_chain(mdp, policy)
    n = mdp.n_states
    e = np.zeros(n)
    e[mdp.initial_state] = 1.0
    mu = (1 - mdp.discount) * np.linalg.solve((np.eye(n) - mdp.discount * P_pi).T, e)
    mu = np.clip(mu, 0.0, None)
    return StationaryDist(mu / mu.sum())


def restart_chain(mdp: FiniteMdp, policy: TabularPolicy) -> np.ndarray:
    """Kernel that restarts at s_I with probability 1 - gamma before every step."""
    P_pi, _ = induced_chain(mdp, policy)
    out = mdp.discount * P_pi
    out[:, mdp.initial_state] += 1 - mdp.discount
    return out


def average_episode_length(mdp: FiniteMdp, policy: TabularPolicy) -> float:
    """Mean recurrence time of the reset state, 1 / xi(reset)."""
    if mdp.reset_state is None:
        raise ValueError("average episode length needs a reset state")
    xi = stationary_distribution(mdp, policy).xi
    mass = xi[mdp.reset_state]
    if mass <= 0:
        raise ValueError("reset not recurrent under this policy")
    return float(1.0 / mass)


def sample_rows(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling, one uniform per row
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def simulate_episode_lengths(mdp: FiniteMdp, policy: TabularPolicy, n_episodes: int, seed: int,
                             max_steps: int = 100_000) -> np.ndarray:
    """Monte Carlo episode lengths: T = i + 1 for the first i with s_i = reset, from s_0 = s_I."""
    if mdp.reset_state is None:
        raise ValueError("episode lengths need a reset state")
    rng = np.random.default_rng(seed)
    P_pi, _ = induced_chain(mdp, policy)
    cdf = np.cumsum(P_pi, axis=1)
    state = np.full(n_episodes, mdp.initial_state)
    length = np.zeros(n_episodes, dtype=np.int64)
    alive = np.ones(n_episodes, dtype=bool)
    for i in range(max_steps):
        done = alive & (state == mdp.reset_state)
        length[done] = i + 1
        alive &= ~done
        if not alive.any():
            return length
        idx = np.flatnonzero(alive)
        state[idx] = sample_rows(cdf[state[idx]], rng.random(len(idx)))
    raise RuntimeError("episodes did not terminate within max_steps")


def sample_transitions(mdp: FiniteMdp, policy: TabularPolicy, count: int, seed: int) -> TransitionBatch:
    """i.i.d. (s, a, r, s') with s ~ xi_pi, a ~ pi(.|s), s' ~ P(.|s, a)."""
    xi = stationary_distribution(mdp, policy).xi
    rng = np.random.default_rng(seed)
    if count == 0:
        empty = np.zeros(0, dtype=int)
        return TransitionBatch(empty, empty, np.zeros(0), empty)
    s = rng.choice(mdp.n_states, size=count, p=xi)
    a = sample_rows(np.cumsum(policy.probs, axis=1)[s], rng.random(count))
    s_next = sample_rows(np.cumsum(mdp.transition[s, a], axis=1), rng.random(count))
    return TransitionBatch(s, a, mdp.reward[s, a], s_next)


def episodic_return(mdp: FiniteMdp, policy: TabularPolicy, episodic_masking: bool = False) -> float:
    """J = V(s_I)."""
    return float(evaluate_policy(mdp, policy, episodic_masking).v[mdp.initial_state])
