"""Importance-ratio neighborhoods and the exact constrained improvement step.

Per state, the step maximizes sum_a p(a) q(a) over the box
(2 - c) base(a) <= p(a) <= c base(a) on the support of base, intersected with
the simplex.  This is a fractional knapsack: every action starts at its floor,
and the remaining mass c - 1 is poured into actions by decreasing value, each
taking at most its spare capacity 2 (c - 1) base(a).  Any other feasible row
can be turned into the greedy one by moving mass from lower- to higher-valued
actions, which never lowers the objective, so the greedy row is optimal.
Actions with equal values share the mass of their level in proportion to
base, so a constant value vector returns base itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import FiniteMdp, StationaryDist, TabularPolicy, evaluate_policy, stationary_distribution


@dataclass(frozen=True)
class IrSummary:
    sup_ir: float
    inf_ir: float
    support_match: bool


def check_c(c: float) -> float:
    c = float(c)
    if not 1.0 < c < 2.0:
        raise ValueError(
            f"neighborhood constant c={c} is out of range: importance ratios are boxed "
            "in [2 - c, c], which requires c in the open interval (1, 2)"
        )
    return c


def extremal_ir(base: TabularPolicy, candidate: TabularPolicy) -> IrSummary:
    if base.probs.shape != candidate.probs.shape:
        raise ValueError("policies have different shapes")
    supp = base.probs > 0
    ratios = candidate.probs[supp] / base.probs[supp]
    match = bool(np.array_equal(supp, candidate.probs > 0))
    return IrSummary(float(ratios.max()), float(ratios.min()), match)


def in_neighborhood(base: TabularPolicy, candidate: TabularPolicy, c: float, tol: float = 1e-12) -> bool:
    """Membership in N^c(base); the box edges are inclusive up to rounding (tol)."""
    c = check_c(c)
    ir = extremal_ir(base, candidate)
    return ir.support_match and 2.0 - c - tol <= ir.inf_ir and ir.sup_ir <= c + tol


def improve_rows(values: np.ndarray, base: np.ndarray, c: float) -> np.ndarray:
    """Greedy box-constrained maximizer, applied row-wise to (n, A) arrays."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    base = np.atleast_2d(np.asarray(base, dtype=float))
    supp = base > 0
    floor = (2.0 - c) * base
    spare = 2.0 * (c - 1.0) * base
    v = np.where(supp, values, -np.inf)
    better = v[:, None, :] > v[:, :, None]  # [i, a, b]: b strictly better than a
    tied = v[:, None, :] == v[:, :, None]
    above = (better * spare[:, None, :]).sum(axis=2)
    level = (tied * spare[:, None, :]).sum(axis=2)
    surplus = 1.0 - floor.sum(axis=1, keepdims=True)
    fill = np.clip(surplus - above, 0.0, level)
    share = np.divide(spare, level, out=np.zeros_like(spare), where=level > 0)
    out = np.where(supp, floor + fill * share, 0.0)
    return out / out.sum(axis=1, keepdims=True)


def constrained_improve_state(action_values, base_row, c: float) -> np.ndarray:
    c = check_c(c)
    return improve_rows(action_values, base_row, c)[0]


def mirror_step(mdp: FiniteMdp, policy: TabularPolicy, c: float,
                sampling: Optional[StationaryDist] = None, episodic_masking: bool = False) -> TabularPolicy:
    """One exact update: maximize the sampled advantage inside N^c(policy)."""
    c = check_c(c)
    if not np.all(policy.probs > 0):
        raise ValueError("mirror step needs a full-support policy")
    if sampling is None:
        sampling = stationary_distribution(mdp, policy)
    xi = sampling.xi if isinstance(sampling, StationaryDist) else np.asarray(sampling)
    if not np.all(xi > 0):
        missing = np.flatnonzero(xi <= 0).tolist()
        raise ValueError(
            f"sampling distribution must have full support over states; states {missing} have zero mass"
        )
    adv = evaluate_policy(mdp, policy, episodic_masking).adv
    return TabularPolicy(improve_rows(adv, policy.probs, c))


def random_neighbor(base: TabularPolicy, c: float, rng: np.random.Generator) -> TabularPolicy:
    """Random policy inside N^c(base) with the same support.

    Each row is base * (1 + t u) with sum(base * u) = 0 and t chosen so every
    ratio stays in [2 - c, c].
    """
    probs = np.array(base.probs)
    out = probs.copy()
    for s in range(probs.shape[0]):
        supp = probs[s] > 0
        if supp.sum() < 2:
            continue
        u = np.zeros(probs.shape[1])
        u[supp] = rng.standard_normal(supp.sum())
        u[supp] -= probs[s, supp] @ u[supp]
        t = (c - 1.0) / np.abs(u[supp]).max() * (1.0 - rng.random())
        out[s, supp] = probs[s, supp] * (1.0 + t * u[supp])
    out /= out.sum(axis=1, keepdims=True)
    return TabularPolicy(out)
