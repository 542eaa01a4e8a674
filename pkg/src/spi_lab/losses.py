"""Local reward and transition losses of a latent model, exact and sampled."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .latent import Encoder, LatentMdp
from .mdp import FiniteMdp, StationaryDist, TabularPolicy, TransitionBatch
from .transport import is_discrete_metric, wasserstein


@dataclass(frozen=True)
class LossReport:
    l_r: float
    l_p: float
    source: str  # "exact-stationary" or "empirical"
    sample_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _weights(mdp: FiniteMdp, weighting, policy: TabularPolicy) -> np.ndarray:
    w = np.asarray(weighting.xi if isinstance(weighting, StationaryDist) else weighting, dtype=float)
    if w.shape != (mdp.n_states,) or policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("weighting/policy dimensions do not match the mdp")
    return w[:, None] * policy.probs  # joint weight of (s, a)


def _check(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp) -> None:
    if encoder.n_states != mdp.n_states or encoder.n_latent != latent.n_latent:
        raise ValueError("encoder does not connect the mdp and the latent model")
    if latent.n_actions != mdp.n_actions:
        raise ValueError("action sets differ between mdp and latent model")


def reward_errors(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp) -> np.ndarray:
    """|R(s, a) - R_bar(phi(s), a)| for every (s, a)."""
    return np.abs(mdp.reward - latent.reward[encoder.mapping])


def transition_errors(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, mask=None) -> np.ndarray:
    """W(phi#P(.|s,a), P_bar(.|phi(s),a)) for every (s, a) (entries outside mask left at 0)."""
    push = mdp.transition @ encoder.matrix()
    target = latent.transition[encoder.mapping]
    if is_discrete_metric(latent.metric):
        return 0.5 * np.abs(push - target).sum(axis=2)
    out = np.zeros(mdp.reward.shape)
    for s, a in zip(*np.nonzero(np.ones_like(out, dtype=bool) if mask is None else mask)):
        out[s, a] = wasserstein(push[s, a], target[s, a], latent.metric)
    return out


def exact_losses(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, weighting,
                 policy: TabularPolicy) -> LossReport:
    _check(mdp, encoder, latent)
    w = _weights(mdp, weighting, policy)
    l_r = float((w * reward_errors(mdp, encoder, latent)).sum())
    l_p = float((w * transition_errors(mdp, encoder, latent, mask=w > 0)).sum())
    return LossReport(l_r, l_p, "exact-stationary", 0)


def expected_latent_distance(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp) -> np.ndarray:
    """E_{s'~P(.|s,a)} E_{z~P_bar(.|phi(s),a)} d(phi(s'), z) for every (s, a)."""
    push = mdp.transition @ encoder.matrix()
    target = latent.transition[encoder.mapping]
    return np.einsum("sal,lm,sam->sa", push, latent.metric, target)


def crude_transition_bound(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, weighting,
                           policy: TabularPolicy) -> float:
    """Independent-coupling upper bound on the transition loss."""
    _check(mdp, encoder, latent)
    w = _weights(mdp, weighting, policy)
    return float((w * expected_latent_distance(mdp, encoder, latent)).sum())


def empirical_losses(batch: TransitionBatch, encoder: Encoder, latent: LatentMdp) -> LossReport:
    """Sample averages of |r - R_bar| and 1 - P_bar(phi(s') | phi(s), a); discrete metric only."""
    if len(batch) == 0:
        raise ValueError("empirical losses need a nonempty batch")
    if not is_discrete_metric(latent.metric):
        raise ValueError("empirical transition loss is defined for the discrete latent metric only")
    z = encoder.mapping[batch.s]
    z_next = encoder.mapping[batch.s_next]
    l_r = float(np.abs(batch.r - latent.reward[z, batch.a]).mean())
    l_p = float(1.0 - latent.transition[z, batch.a, z_next].mean())
    return LossReport(l_r, l_p, "empirical", len(batch))
