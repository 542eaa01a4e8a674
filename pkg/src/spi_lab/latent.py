"""Encoders, latent MDPs, pushforward dynamics and latent Lipschitz constants."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import FiniteMdp, StationaryDist, TabularPolicy, _frozen, check_stochastic
from .transport import wasserstein

METRIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Encoder:
    mapping: np.ndarray
    n_latent: int

    def __post_init__(self):
        m = _frozen(self.mapping, int)
        if m.ndim != 1:
            raise ValueError("encoder mapping must be 1-d")
        if m.size and (m.min() < 0 or m.max() >= self.n_latent):
            raise ValueError("encoder maps a state outside 0..n_latent-1")
        if len(np.unique(m)) != self.n_latent:
            raise ValueError("encoder is not surjective: some latent state has no preimage")
        object.__setattr__(self, "mapping", m)
        object.__setattr__(self, "n_latent", int(self.n_latent))

    @property
    def n_states(self) -> int:
        return len(self.mapping)

    def matrix(self) -> np.ndarray:
        """0/1 matrix E with E[s, phi(s)] = 1."""
        E = np.zeros((self.n_states, self.n_latent))
        E[np.arange(self.n_states), self.mapping] = 1.0
        return E

    def compose(self, latent_policy: TabularPolicy) -> TabularPolicy:
        """Ground policy pi(.|s) = latent_policy(.|phi(s))."""
        if latent_policy.n_states != self.n_latent:
            raise ValueError("latent policy size does not match encoder")
        return TabularPolicy(latent_policy.probs[self.mapping])

    def reset_aligned(self, mdp: FiniteMdp) -> bool:
        """phi(s) equals the reset's latent iff s is the reset state."""
        if mdp.reset_state is None:
            return True
        hits = self.mapping == self.mapping[mdp.reset_state]
        return int(hits.sum()) == 1

    @classmethod
    def identity(cls, n: int) -> "Encoder":
        return cls(np.arange(n), n)


@dataclass(frozen=True, eq=False)
class LatentMdp:
    transition: np.ndarray  # (L, A, L)
    reward: np.ndarray  # (L, A)
    initial_state: int
    discount: float
    metric: np.ndarray
    reset_state: Optional[int] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        D = _frozen(self.metric)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError("latent transition/reward shapes disagree")
        check_stochastic(P, "latent transition")
        n = P.shape[0]
        if D.shape != (n, n):
            raise ValueError("metric shape does not match latent space")
        check_metric(D)
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        for name, val in (("transition", P), ("reward", R), ("metric", D)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "discount", float(self.discount))
        if self.reset_state is not None:
            object.__setattr__(self, "reset_state", int(self.reset_state))

    @property
    def n_latent(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def as_mdp(self) -> FiniteMdp:
        reset = self.reset_state if self.is_episodic() else None
        return FiniteMdp(self.transition, self.reward, self.initial_state, self.discount, reset)

    def is_episodic(self) -> bool:
        r = self.reset_state
        if r is None:
            return False
        return bool(np.all(self.reward[r] == 0) and np.all(self.transition[r, :, self.initial_state] == 1.0))

    def replace(self, **changes) -> "LatentMdp":
        fields = dict(transition=self.transition, reward=self.reward, initial_state=self.initial_state,
                      discount=self.discount, metric=self.metric, reset_state=self.reset_state)
        fields.update(changes)
        return LatentMdp(**fields)


def discrete_metric(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def check_metric(D: np.ndarray, tol: float = METRIC_TOL) -> None:
    if np.any(~np.isfinite(D)) or np.any(D < 0):
        raise ValueError("metric entries must be finite and nonnegative")
    if np.any(np.diag(D) != 0):
        raise ValueError("metric must vanish on the diagonal")
    if np.abs(D - D.T).max(initial=0.0) > tol:
        raise ValueError("metric must be symmetric")
    # d(x, z) <= d(x, y) + d(y, z) for all triples
    excess = D[:, None, :] - D[:, :, None] - D[None, :, :]
    if excess.size and excess.max() > tol:
        raise ValueError("metric violates the triangle inequality")


def pushforward(encoder: Encoder, ground_dist) -> np.ndarray:
    ground_dist = np.asarray(ground_dist, dtype=float)
    if ground_dist.shape[-1] != encoder.n_states:
        raise ValueError("distribution size does not match encoder")
    return ground_dist @ encoder.matrix()


def fit_latent_model(mdp: FiniteMdp, encoder: Encoder, weighting: StationaryDist,
                     metric: Optional[np.ndarray] = None) -> LatentMdp:
    """Weighting-conditional aggregate of the ground model over each latent block."""
    if encoder.n_states != mdp.n_states:
        raise ValueError("encoder and mdp disagree on the number of states")
    w = np.asarray(weighting.xi if isinstance(weighting, StationaryDist) else weighting, dtype=float)
    E = encoder.matrix()
    mass = w @ E
    if np.any(mass <= 0):
        empty = np.flatnonzero(mass <= 0).tolist()
        raise ValueError(f"zero-mass latent block(s) {empty} under the weighting")
    cond = (w[:, None] * E) / mass[None, :]  # w(s | latent)
    reward = cond.T @ mdp.reward
    push = mdp.transition @ E  # (S, A, L)
    transition = np.einsum("sl,sam->lam", cond, push)
    transition /= transition.sum(axis=2, keepdims=True)
    reset = None if mdp.reset_state is None else int(encoder.mapping[mdp.reset_state])
    if metric is None:
        metric = discrete_metric(encoder.n_latent)
    init = int(encoder.mapping[mdp.initial_state])
    if reset is not None and encoder.reset_aligned(mdp):
        # the reset block is the singleton {s_reset}: restore exact point masses
        reward[reset] = 0.0
        transition[reset] = 0.0
        transition[reset, :, init] = 1.0
    return LatentMdp(transition, reward, init, mdp.discount, metric, reset)


@dataclass(frozen=True)
class LipschitzReport:
    k_r: float
    k_p: float
    k_v: float
    policy_id: str


def policy_digest(policy: TabularPolicy) -> str:
    return hashlib.sha256(np.ascontiguousarray(policy.probs).tobytes()).hexdigest()[:16]


def lipschitz_constants(latent: LatentMdp, latent_policy: TabularPolicy, tol: float = 1e-12) -> LipschitzReport:
    """Smallest reward/transition Lipschitz constants of the policy-mixed latent model."""
    if latent_policy.probs.shape != (latent.n_latent, latent.n_actions):
        raise ValueError("latent policy shape does not match latent model")
    r_mix = np.einsum("la,la->l", latent_policy.probs, latent.reward)
    p_mix = np.einsum("la,lam->lm", latent_policy.probs, latent.transition)
    n = latent.n_latent
    k_r = k_p = 0.0
    for x in range(n):
        for y in range(x + 1, n):
            d = latent.metric[x, y]
            dr = abs(r_mix[x] - r_mix[y])
            dp = wasserstein(p_mix[x], p_mix[y], latent.metric)
            if d == 0:
                if dr > tol or dp > tol:
                    raise ValueError(
                        f"metric identifies behaviorally distinct latents {x} and {y}"
                    )
                continue
            k_r = max(k_r, dr / d)
            k_p = max(k_p, dp / d)
    gamma = latent.discount
    k_v = k_r / (1 - gamma * k_p) if gamma * k_p < 1 else float("inf")
    return LipschitzReport(float(k_r), float(k_p), float(k_v), policy_digest(latent_policy))
