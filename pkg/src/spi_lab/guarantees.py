"""Exact checkers for the value-difference, return and safe-improvement bounds."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .latent import Encoder, LatentMdp, lipschitz_constants
from .losses import exact_losses, expected_latent_distance, reward_errors
from .mdp import FiniteMdp, TabularPolicy, average_episode_length, evaluate_policy, stationary_distribution
from .neighborhood import extremal_ir
from .transport import is_discrete_metric

VERDICT_TOL = 1e-9


class PreconditionError(ValueError):
    """A hypothesis of a bound does not hold for the given inputs."""


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    holds: bool
    slack: float
    inputs_digest: str
    components: dict = field(default_factory=dict)
    vacuous: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PacConfig:
    epsilon: float
    delta: float
    ael_upper_bound: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.ael_upper_bound is not None and not self.ael_upper_bound > 1:
            raise ValueError("an average episode length bound must exceed 1")


def inputs_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if p is None:
            h.update(b"none")
        elif isinstance(p, FiniteMdp):
            for arr in (p.transition, p.reward):
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update(repr((p.initial_state, p.discount, p.reset_state)).encode())
        elif isinstance(p, LatentMdp):
            for arr in (p.transition, p.reward, p.metric):
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update(repr((p.initial_state, p.discount, p.reset_state)).encode())
        elif isinstance(p, Encoder):
            h.update(np.ascontiguousarray(p.mapping).tobytes())
        elif isinstance(p, TabularPolicy):
            h.update(np.ascontiguousarray(p.probs).tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _report(name, lhs, rhs, digest, components, vacuous=False, note="") -> BoundReport:
    lhs, rhs = float(lhs), float(rhs)
    holds = bool(lhs <= rhs + VERDICT_TOL)
    return BoundReport(name, lhs, rhs, holds, rhs - lhs, digest,
                       {k: (float(v) if isinstance(v, (int, float, np.floating, np.integer)) else v)
                        for k, v in components.items()}, vacuous, note)


class _Setting:
    """Quantities shared by all bounds for one (baseline, candidate) pair."""

    def __init__(self, mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline: TabularPolicy,
                 latent_policy: TabularPolicy):
        if encoder.n_states != mdp.n_states or encoder.n_latent != latent.n_latent:
            raise PreconditionError("encoder does not connect the mdp and the latent model")
        if latent.n_actions != mdp.n_actions:
            raise PreconditionError("mdp and latent model have different action sets")
        if abs(latent.discount - mdp.discount) > 0:
            raise PreconditionError("mdp and latent model use different discounts")
        gamma = mdp.discount
        self.gamma = gamma
        self.policy = encoder.compose(latent_policy)
        ir = extremal_ir(baseline, self.policy)
        if not ir.support_match:
            raise PreconditionError("neighborhood precondition violated: candidate and baseline supports differ")
        if gamma > 0 and ir.sup_ir * gamma >= 1:
            raise PreconditionError(
                f"neighborhood precondition violated: supremum importance ratio {ir.sup_ir:.6g} "
                f"is not below 1/gamma = {1 / gamma:.6g}"
            )
        self.sir = ir.sup_ir
        self.lip = lipschitz_constants(latent, latent_policy)
        if gamma * self.lip.k_p >= 1:
            raise PreconditionError(
                f"Lipschitz precondition fails: K_P = {self.lip.k_p:.6g} is not below 1/gamma"
            )
        self.xi_b = stationary_distribution(mdp, baseline)
        self.losses = exact_losses(mdp, encoder, latent, self.xi_b, baseline)
        self.denom = 1.0 / self.sir - gamma
        self.value_range = 2 * max(mdp.r_max, float(np.abs(latent.reward).max())) / (1 - gamma)


def verify_avd(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline: TabularPolicy,
               latent_policy: TabularPolicy) -> BoundReport:
    """E_{s~xi_b} |V(s) - V_bar(phi(s))| against (L_R + gamma K_V L_P) / (1/SIR - gamma)."""
    st = _Setting(mdp, encoder, latent, baseline, latent_policy)
    v = evaluate_policy(mdp, st.policy).v
    v_bar = evaluate_policy(latent.as_mdp(), latent_policy).v
    lhs = float(st.xi_b.xi @ np.abs(v - v_bar[encoder.mapping]))
    k_v = st.lip.k_v
    rhs = (st.losses.l_r + st.gamma * k_v * st.losses.l_p) / st.denom
    comps = dict(SIR=st.sir, K_V=k_v, K_R=st.lip.k_r, K_P=st.lip.k_p, L_R=st.losses.l_r, L_P=st.losses.l_p)
    digest = inputs_digest("avd", mdp, encoder, latent, baseline, latent_policy)
    return _report("avd", lhs, rhs, digest, comps, vacuous=rhs >= st.value_range)


def _check_episodic(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, strict_gamma: bool):
    notes = []
    if mdp.reset_state is None:
        raise PreconditionError("episodic precondition fails: the mdp has no reset state")
    if not encoder.reset_aligned(mdp):
        raise PreconditionError("reset alignment fails: another state shares the reset state's latent")
    z_reset = int(encoder.mapping[mdp.reset_state])
    if latent.reset_state != z_reset or not latent.is_episodic():
        raise PreconditionError("latent model is not episodic around the encoded reset state")
    if latent.initial_state != int(encoder.mapping[mdp.initial_state]):
        raise PreconditionError("latent initial state is not the encoded initial state")
    if mdp.discount <= 0.5:
        if strict_gamma:
            raise PreconditionError(f"discount hypothesis fails: gamma = {mdp.discount} must exceed 1/2")
        notes.append("gamma <= 1/2: outside the stated hypothesis")
    return "; ".join(notes)


def verify_value_bound(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline: TabularPolicy,
                       latent_policy: TabularPolicy, strict_gamma: bool = True,
                       episodic_masking: bool = False) -> BoundReport:
    """|J_M(pi_bar o phi) - J_Mbar(pi_bar)| against AEL (L_R/gamma + K_V L_P) / (1/SIR - gamma)."""
    note = _check_episodic(mdp, encoder, latent, strict_gamma)
    st = _Setting(mdp, encoder, latent, baseline, latent_policy)
    ael = average_episode_length(mdp, baseline)
    j = evaluate_policy(mdp, st.policy, episodic_masking).v[mdp.initial_state]
    j_bar = evaluate_policy(latent.as_mdp(), latent_policy, episodic_masking).v[latent.initial_state]
    k_v = st.lip.k_v
    lhs = abs(j - j_bar)
    rhs = ael * (st.losses.l_r / st.gamma + k_v * st.losses.l_p) / st.denom
    comps = dict(SIR=st.sir, K_V=k_v, AEL=ael, L_R=st.losses.l_r, L_P=st.losses.l_p, J=j, J_latent=j_bar)
    digest = inputs_digest("value_bound", mdp, encoder, latent, baseline, latent_policy, episodic_masking)
    return _report("value_bound", lhs, rhs, digest, comps, vacuous=rhs >= st.value_range, note=note)


def spi_error(ael, l_r, l_p, k_v, sir, gamma) -> float:
    """zeta = AEL (L_R/gamma + K_V L_P) (1/(1/SIR - gamma) + 1/(1 - gamma))."""
    return ael * (l_r / gamma + k_v * l_p) * (1.0 / (1.0 / sir - gamma) + 1.0 / (1.0 - gamma))


def verify_spi(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline_latent: TabularPolicy,
               candidate_latent: TabularPolicy, strict_gamma: bool = True,
               episodic_masking: bool = False) -> BoundReport:
    """Checks J(pi o phi) - J(pi_b) >= Jbar(pi) - Jbar(pi_b) - zeta.

    Reported as lhs = latent improvement - ground improvement, rhs = zeta.  The
    bound is obtained by applying the return bound to both the candidate and the
    baseline, so K_V is the larger of their two latent value constants.
    """
    note = _check_episodic(mdp, encoder, latent, strict_gamma)
    baseline = encoder.compose(baseline_latent)
    st = _Setting(mdp, encoder, latent, baseline, candidate_latent)
    k_v_base = lipschitz_constants(latent, baseline_latent).k_v
    k_v = max(st.lip.k_v, k_v_base)
    ael = average_episode_length(mdp, baseline)
    lat = latent.as_mdp()
    j_new = evaluate_policy(mdp, st.policy, episodic_masking).v[mdp.initial_state]
    j_base = evaluate_policy(mdp, baseline, episodic_masking).v[mdp.initial_state]
    jb_new = evaluate_policy(lat, candidate_latent, episodic_masking).v[lat.initial_state]
    jb_base = evaluate_policy(lat, baseline_latent, episodic_masking).v[lat.initial_state]
    zeta = spi_error(ael, st.losses.l_r, st.losses.l_p, k_v, st.sir, st.gamma)
    lhs = (jb_new - jb_base) - (j_new - j_base)
    comps = dict(SIR=st.sir, K_V=k_v, K_V_candidate=st.lip.k_v, K_V_baseline=k_v_base, AEL=ael,
                 L_R=st.losses.l_r, L_P=st.losses.l_p, zeta=zeta, ground_improvement=j_new - j_base,
                 latent_improvement=jb_new - jb_base)
    digest = inputs_digest("spi", mdp, encoder, latent, baseline_latent, candidate_latent, episodic_masking)
    return _report("spi", lhs, zeta, digest, comps, vacuous=zeta >= 2 * st.value_range, note=note)


def verify_representation_quality(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline: TabularPolicy,
                                  latent_policy: TabularPolicy, epsilon: float, trials: int = 10_000,
                                  seed: int = 0, strict_gamma: bool = True, max_enumerated: int = 64) -> BoundReport:
    """Probability, over state pairs from xi_b x xi_b, that values break K_V-Lipschitzness by more than epsilon.

    lhs is the exact probability when the state count allows enumeration,
    otherwise the sampled frequency; rhs is delta.  The sampled frequency is
    also checked against delta plus three binomial standard errors.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    note = _check_episodic(mdp, encoder, latent, strict_gamma)
    st = _Setting(mdp, encoder, latent, baseline, latent_policy)
    k_v = st.lip.k_v
    delta = 4 * (st.losses.l_r + st.gamma * k_v * st.losses.l_p) / (epsilon * st.denom)
    v = evaluate_policy(mdp, st.policy).v
    d = latent.metric[encoder.mapping][:, encoder.mapping]
    violation = np.abs(v[:, None] - v[None, :]) > k_v * d + epsilon
    xi = st.xi_b.xi
    rng = np.random.default_rng(seed)
    s1 = rng.choice(mdp.n_states, size=trials, p=xi)
    s2 = rng.choice(mdp.n_states, size=trials, p=xi)
    freq = float(violation[s1, s2].mean()) if trials else 0.0
    dc = min(max(delta, 0.0), 1.0)
    sampled_rhs = delta + 3 * math.sqrt(dc * (1 - dc) / trials) if trials else float("inf")
    exact = float(xi @ violation @ xi) if mdp.n_states <= max_enumerated else None
    comps = dict(SIR=st.sir, K_V=k_v, L_R=st.losses.l_r, L_P=st.losses.l_p, epsilon=epsilon, delta=delta,
                 sampled_frequency=freq, sampled_rhs=sampled_rhs, trials=trials,
                 exact_probability=exact if exact is not None else float("nan"))
    digest = inputs_digest("representation", mdp, encoder, latent, baseline, latent_policy, epsilon, trials, seed)
    if delta >= 1:
        return BoundReport("representation", exact if exact is not None else freq, delta, True,
                           delta - (exact if exact is not None else freq), digest, comps, True,
                           "vacuous bound: delta >= 1")
    lhs = exact if exact is not None else freq
    rep = _report("representation", lhs, delta, digest, comps, note=note)
    if freq > sampled_rhs + VERDICT_TOL:
        rep.holds = False
        rep.note = (rep.note + "; " if rep.note else "") + "sampled frequency exceeds delta + 3 SE"
    return rep


# ---------------------------------------------------------------- PAC variant

def pac_kappa(sir: float, gamma: float) -> float:
    return 1.0 / (1.0 / sir - gamma) + 1.0 / (1.0 - gamma)


def pac_r_star(r_max: float) -> float:
    return max(1.0, 4.0 * r_max ** 2)


def pac_required_t_known_length(L, r_max, delta, epsilon, sir, gamma, k_v) -> int:
    """Sample size when an upper bound L on the average episode length is known."""
    kappa = pac_kappa(sir, gamma)
    base = -pac_r_star(r_max) * math.log(delta / 2) / epsilon ** 2
    return int(math.ceil(base * (L * kappa * (1.0 / gamma + k_v)) ** 2))


def pac_required_t_estimated_length(xi_hat, l_r_hat, l_p_hat, r_max, delta, epsilon, sir, gamma, k_v) -> int:
    """Sample size when the reset frequency xi_hat is estimated from the same data."""
    kappa = pac_kappa(sir, gamma)
    loss = l_r_hat / gamma + k_v * l_p_hat
    second = (kappa / xi_hat * loss + epsilon + kappa * (1.0 / gamma + k_v)) / (epsilon * xi_hat)
    return int(math.ceil(-pac_r_star(r_max) * math.log(delta / 3) / 2 * max(1.0 / xi_hat ** 2, second ** 2)))


class _CellSampler:
    """Draws T i.i.d. transitions under xi_b as multinomial counts over (s, a, s') cells."""

    def __init__(self, mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline: TabularPolicy, xi):
        self.p = (xi[:, None, None] * baseline.probs[:, :, None] * mdp.transition).ravel()
        self.p = self.p / self.p.sum()
        S, A = mdp.n_states, mdp.n_actions
        z = encoder.mapping
        lr = reward_errors(mdp, encoder, latent)
        lp = 1.0 - latent.transition[z][:, :, z]  # (s, a, s') -> 1 - P_bar(phi(s') | phi(s), a)
        self.lr = np.broadcast_to(lr[:, :, None], (S, A, S)).ravel()
        self.lp = lp.ravel()
        is_reset = np.zeros(S)
        if mdp.reset_state is not None:
            is_reset[mdp.reset_state] = 1.0
        self.reset = np.broadcast_to(is_reset[:, None, None], (S, A, S)).ravel()

    def draw(self, T: int, rng: np.random.Generator):
        counts = rng.multinomial(T, self.p)
        return (float(counts @ self.lr) / T, float(counts @ self.lp) / T, float(counts @ self.reset) / T)


@dataclass
class PacTrial:
    T: int
    l_r_hat: float
    l_p_hat: float
    xi_hat: float
    zeta_hat: float


def pac_verify(mdp: FiniteMdp, encoder: Encoder, latent: LatentMdp, baseline_latent: TabularPolicy,
               candidate_latent: TabularPolicy, config: PacConfig, trials: int = 200,
               initial_t: int = 1000, max_doublings: int = 60, strict_gamma: bool = True) -> BoundReport:
    """Coverage of {zeta_hat >= zeta} over independent data sets.

    Case 1 applies when config.ael_upper_bound is set; case 2 otherwise.
    lhs is the miss rate, rhs is delta + 3 binomial standard errors.
    """
    note = _check_episodic(mdp, encoder, latent, strict_gamma)
    if not is_discrete_metric(latent.metric):
        raise PreconditionError("the PAC estimator needs the discrete latent metric")
    baseline = encoder.compose(baseline_latent)
    st = _Setting(mdp, encoder, latent, baseline, candidate_latent)
    k_v = max(st.lip.k_v, lipschitz_constants(latent, baseline_latent).k_v)
    gamma, sir, eps, delta = st.gamma, st.sir, config.epsilon, config.delta
    ael = average_episode_length(mdp, baseline)
    zeta = spi_error(ael, st.losses.l_r, st.losses.l_p, k_v, sir, gamma)
    kappa = pac_kappa(sir, gamma)
    r_max = mdp.r_max
    sampler = _CellSampler(mdp, encoder, latent, baseline, st.xi_b.xi)
    rng = np.random.default_rng(config.seed)
    case = 1 if config.ael_upper_bound is not None else 2
    records = []
    for _ in range(trials):
        if case == 1:
            L = config.ael_upper_bound
            if L < ael:
                raise PreconditionError(f"episode length bound {L} is below the true value {ael:.6g}")
            T = pac_required_t_known_length(L, r_max, delta, eps, sir, gamma, k_v)
            l_r, l_p, xi_hat = sampler.draw(T, rng)
            zeta_hat = L * (l_r / gamma + k_v * l_p) * kappa + eps
        else:
            T = initial_t
            for _ in range(max_doublings):
                l_r, l_p, xi_hat = sampler.draw(T, rng)
                if xi_hat == 0:
                    T *= 2
                    continue
                need = pac_required_t_estimated_length(xi_hat, l_r, l_p, r_max, delta, eps, sir, gamma, k_v)
                if T >= need:
                    break
                T = max(2 * T, need)
            else:
                raise RuntimeError("reset state never observed or sample size never settled; giving up")
            zeta_hat = (l_r / gamma + k_v * l_p) * kappa / xi_hat + eps
        records.append(PacTrial(T, l_r, l_p, xi_hat, zeta_hat))
    zeta_hats = np.array([r.zeta_hat for r in records])
    miss = float(np.mean(zeta_hats < zeta)) if trials else 0.0
    se = math.sqrt(delta * (1 - delta) / trials) if trials else float("inf")
    comps = dict(case=case, zeta=zeta, zeta_hat_mean=float(zeta_hats.mean()) if trials else float("nan"),
                 zeta_hat_min=float(zeta_hats.min()) if trials else float("nan"), kappa=kappa,
                 R_star=pac_r_star(r_max), K_V=k_v, SIR=sir, AEL=ael, L_R=st.losses.l_r, L_P=st.losses.l_p,
                 epsilon=eps, delta=delta, coverage=1 - miss, trials=trials,
                 T_max=max((r.T for r in records), default=0))
    digest = inputs_digest("pac", mdp, encoder, latent, baseline_latent, candidate_latent, config, trials)
    return _report(f"pac_case{case}", miss, delta + 3 * se, digest, comps, note=note)
