"""Clipped-surrogate updates for softmax latent policies and latent imagination."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .latent import Encoder, LatentMdp
from .mdp import FiniteMdp, TabularPolicy, TransitionBatch, sample_rows, evaluate_policy


@dataclass(frozen=True, eq=False)
class SoftmaxLatentPolicy:
    logits: np.ndarray  # (L, A), temperature fixed at 1

    def __post_init__(self):
        x = np.array(self.logits, dtype=float)
        if x.ndim != 2 or not np.all(np.isfinite(x)):
            raise ValueError("logits must be a finite (L, A) matrix")
        x.setflags(write=False)
        object.__setattr__(self, "logits", x)

    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def to_tabular(self) -> TabularPolicy:
        return TabularPolicy(self.probs())

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxLatentPolicy":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("softmax policies need full support")
        return cls(np.log(probs))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SurrogateConfig:
    epsilon_clip: float = 0.1
    alpha_r: float = 0.01
    alpha_p: float = 5e-4
    learning_rate: float = 0.5
    epochs: int = 4
    minibatches: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon_clip > 0:
            raise ValueError("epsilon_clip must be positive")
        for name in ("alpha_r", "alpha_p"):
            val = getattr(self, name)
            if not 0 < val <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be at least 1")

    @classmethod
    def for_neighborhood(cls, c: float, **kw) -> "SurrogateConfig":
        return cls(epsilon_clip=c - 1.0, **kw)


def transitionwise_losses(s, a, s_next, encoder: Encoder, latent: LatentMdp, mdp: FiniteMdp):
    """(|R(s,a) - R_bar(phi(s),a)|, E_{z ~ P_bar(.|phi(s),a)} d(phi(s'), z)); works on arrays too."""
    z = encoder.mapping[s]
    l_r = np.abs(mdp.reward[s, a] - latent.reward[z, a])
    l_p = np.einsum("...k,...k->...", latent.transition[z, a], latent.metric[encoder.mapping[s_next]])
    if np.ndim(l_r) == 0:
        return float(l_r), float(l_p)
    return l_r, l_p


def utility(s, a, s_next, adv, config: SurrogateConfig, encoder: Encoder, latent: LatentMdp, mdp: FiniteMdp):
    """U = adv - alpha_R l_R - alpha_P l_P."""
    l_r, l_p = transitionwise_losses(s, a, s_next, encoder, latent, mdp)
    return adv - config.alpha_r * l_r - config.alpha_p * l_p


def ppo_drift(base: TabularPolicy, candidate: TabularPolicy, values, state: int, epsilon: float) -> float:
    """E_{a~base}[ReLU((r - clip(r, 1-eps, 1+eps)) values(s, a))] with r = candidate/base."""
    b = base.probs[state]
    c = candidate.probs[state]
    supp = b > 0
    if not np.array_equal(supp, c > 0):
        raise ValueError(f"base and candidate supports differ at state {state}")
    ratio = c[supp] / b[supp]
    vals = np.asarray(values, dtype=float)[state][supp]
    excess = (ratio - np.clip(ratio, 1 - epsilon, 1 + epsilon)) * vals
    return float(b[supp] @ np.maximum(excess, 0.0))


def clipped_objective(logits, z, a, u, old_p, epsilon: float) -> float:
    """mean_t min(r_t U_t, clip(r_t, 1 +- eps) U_t) with r_t = pi(a_t|z_t) / old_p_t."""
    ratio = softmax(logits)[z, a] / old_p
    return float(np.mean(np.minimum(ratio * u, np.clip(ratio, 1 - epsilon, 1 + epsilon) * u)))


def clipped_gradient(logits, z, a, u, old_p, epsilon: float) -> np.ndarray:
    """Gradient of clipped_objective w.r.t. the logits.

    A sample contributes U r (e_a - pi(.|z)) to row z when its unclipped term is
    the active branch of the min, and nothing otherwise.
    """
    probs = softmax(logits)
    ratio = probs[z, a] / old_p
    active = np.where(u >= 0, ratio <= 1 + epsilon, ratio >= 1 - epsilon)
    coef = np.where(active, u * ratio, 0.0) / len(z)
    grad = np.zeros_like(logits)
    np.add.at(grad, z, -coef[:, None] * probs[z])
    np.add.at(grad, (z, a), coef)
    return grad


def clipped_update(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, policy: SoftmaxLatentPolicy,
                   batch: TransitionBatch, config: SurrogateConfig, adv: Optional[np.ndarray] = None
                   ) -> SoftmaxLatentPolicy:
    """Gradient ascent on the clipped surrogate with utility U over epochs x minibatches."""
    if len(batch) == 0:
        raise ValueError("clipped update needs a nonempty batch")
    if adv is None:
        adv = evaluate_policy(mdp, encoder.compose(policy.to_tabular())).adv
    u = utility(batch.s, batch.a, batch.s_next, adv[batch.s, batch.a], config, encoder, latent, mdp)
    z = encoder.mapping[batch.s]
    a = batch.a
    old_p = policy.probs()[z, a]
    logits = np.array(policy.logits)
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        for k, idx in enumerate(np.array_split(rng.permutation(len(batch)), config.minibatches)):
            if len(idx) == 0:
                continue
            grad = clipped_gradient(logits, z[idx], a[idx], u[idx], old_p[idx], config.epsilon_clip)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite gradient at epoch {epoch}, minibatch {k}")
            logits += config.learning_rate * grad
    return SoftmaxLatentPolicy(logits)


# ---------------------------------------------------------------- imagination

@dataclass(frozen=True, eq=False)
class LatentBatch:
    states: np.ndarray  # (count, H + 1)
    actions: np.ndarray  # (count, H)
    rewards: np.ndarray  # (count, H)
    discount: float

    def __len__(self) -> int:
        return len(self.states)

    def discounted_returns(self, critic: Optional[np.ndarray] = None) -> np.ndarray:
        """sum_t gamma^t r_t, plus gamma^H critic(z_H) when a critic is given."""
        H = self.rewards.shape[1]
        out = self.rewards @ (self.discount ** np.arange(H))
        if critic is not None and len(self):
            out = out + self.discount ** H * np.asarray(critic)[self.states[:, -1]]
        return out


def imagine_rollouts(latent: LatentMdp, latent_policy: Union[SoftmaxLatentPolicy, TabularPolicy], starts,
                     horizon: int, count: int, seed: int) -> LatentBatch:
    """Sample `count` trajectories of length `horizon` inside the latent model."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    probs = latent_policy.probs() if isinstance(latent_policy, SoftmaxLatentPolicy) else latent_policy.probs
    starts = np.asarray(starts, dtype=float)
    rng = np.random.default_rng(seed)
    states = np.zeros((count, horizon + 1), dtype=int)
    actions = np.zeros((count, horizon), dtype=int)
    rewards = np.zeros((count, horizon))
    if count == 0:
        return LatentBatch(states, actions, rewards, latent.discount)
    states[:, 0] = rng.choice(latent.n_latent, size=count, p=starts)
    pol_cdf = np.cumsum(probs, axis=1)
    trans_cdf = np.cumsum(latent.transition, axis=2)
    for t in range(horizon):
        z = states[:, t]
        act = sample_rows(pol_cdf[z], rng.random(count))
        actions[:, t] = act
        rewards[:, t] = latent.reward[z, act]
        states[:, t + 1] = sample_rows(trans_cdf[z, act], rng.random(count))
    return LatentBatch(states, actions, rewards, latent.discount)

