"""Experiment orchestration: configs, run loops, traces and aggregate reports."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .envs import (EnvSpec, build_fig1, build_fig2, fig2_merged_update, fig2_split_update, latent_optimal_policy,
                   random_episodic, random_latent_model)
from .guarantees import (PacConfig, PreconditionError, pac_verify, verify_avd, verify_representation_quality,
                         verify_spi, verify_value_bound)
from .latent import fit_latent_model
from .losses import exact_losses
from .mdp import (FiniteMdp, TabularPolicy, average_episode_length, discounted_occupancy, evaluate_policy,
                  sample_transitions, stationary_distribution, value_iteration)
from .neighborhood import check_c, extremal_ir, in_neighborhood, mirror_step, random_neighbor
from .surrogate import SoftmaxLatentPolicy, SurrogateConfig, clipped_update, imagine_rollouts

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
ALGORITHMS = ("mirror", "deepspi", "dreamspi-eval", "verify", "pac")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algorithm: str = "mirror"
    env: str = "random"
    env_params: dict = field(default_factory=dict)
    mdp_path: Optional[str] = None
    policy_path: Optional[str] = None
    c: float = 1.3
    clip: float = 0.1
    alpha_r: float = 0.01
    alpha_p: float = 5e-4
    learning_rate: float = 0.5
    epochs: int = 4
    minibatches: int = 4
    batch_size: int = 2000
    iters: int = 100
    steps: int = 20
    instances: int = 300
    seed: int = 42
    trials: int = 10_000
    epsilon: float = 0.05
    delta: float = 0.1
    horizon: int = 64
    rollouts: int = 100_000
    out: Optional[str] = None
    run_root: str = "runs"
    verbose: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        for path in (self.mdp_path, self.policy_path):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"referenced file does not exist: {path}")
        if self.algorithm == "mirror":
            try:
                check_c(self.c)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            SurrogateConfig(self.clip, self.alpha_r, self.alpha_p, self.learning_rate, self.epochs, self.minibatches)
            if not 0 < self.delta < 1 or not self.epsilon > 0:
                raise ValueError("epsilon must be positive and delta must lie in (0, 1)")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("iters", "steps", "instances", "trials", "horizon", "rollouts", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        return self

    def digest(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("out", "run_root", "verbose")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunTrace:
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK

    def add(self, **row) -> None:
        for key, val in row.items():
            if isinstance(val, float) and math.isnan(val):
                raise ValueError(f"NaN in trace column {key}")
        self.rows.append(row)

    def write(self, config: ExperimentConfig) -> Path:
        trace_path, summary_path = output_paths(config)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(trace_path, self.columns, self.rows)
        summary = dict(self.summary, config_digest=config.digest(), exit_code=self.exit_code)
        io.write_json(summary_path, _plain(summary))
        return trace_path


def output_paths(config: ExperimentConfig):
    if config.out:
        trace = Path(config.out)
        return trace, trace.with_name(trace.stem + ".summary.json")
    run_dir = Path(config.run_root) / f"{config.algorithm}-{config.digest()}"
    return run_dir / "trace.csv", run_dir / "summary.json"


def _fmt(val):
    if isinstance(val, (bool, np.bool_)):
        return "true" if val else "false"
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    if isinstance(val, (np.integer,)):
        return str(int(val))
    return "" if val is None else str(val)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def worker_count() -> int:
    raw = os.environ.get("SPI_LAB_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("SPI_LAB_THREADS must be a positive integer") from None


# ---------------------------------------------------------------- environments

def load_env(config: ExperimentConfig) -> EnvSpec:
    params = dict(config.env_params)
    if config.env == "fig1":
        return build_fig1(**params)
    if config.env == "fig2":
        return build_fig2(**params)
    if config.env == "random":
        params.setdefault("n_states", 8)
        params.setdefault("n_actions", 3)
        params.setdefault("seed", config.seed)
        return random_episodic(**params)
    raise ConfigError(f"unknown environment {config.env!r}")


# ---------------------------------------------------------------- mirror learning

def run_mirror(config: ExperimentConfig) -> RunTrace:
    """Iterates the exact constrained update, auditing monotonicity and membership."""
    if config.mdp_path:
        mdp = io.mdp_from_dict(io.read_json(config.mdp_path))
    else:
        mdp = load_env(config).mdp
    if config.policy_path:
        policy = io.policy_from_dict(io.read_json(config.policy_path))
    else:
        policy = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    v_star, _ = value_iteration(mdp)
    trace = RunTrace(["iteration", "J", "V_gap", "SIR", "inf_IR", "in_neighborhood", "monotone"])
    v = evaluate_policy(mdp, policy).v
    trace.add(iteration=0, J=float(v[mdp.initial_state]), V_gap=float(np.abs(v - v_star).max()),
              SIR=1.0, inf_IR=1.0, in_neighborhood=True, monotone=True)
    violations = 0
    for it in range(1, config.iters + 1):
        new = mirror_step(mdp, policy, config.c)
        ir = extremal_ir(policy, new)
        member = in_neighborhood(policy, new, config.c)
        v_new = evaluate_policy(mdp, new).v
        monotone = bool(np.all(v_new >= v - 1e-10))
        violations += (not monotone) + (not member)
        trace.add(iteration=it, J=float(v_new[mdp.initial_state]), V_gap=float(np.abs(v_new - v_star).max()),
                  SIR=ir.sup_ir, inf_IR=ir.inf_ir, in_neighborhood=member, monotone=monotone)
        policy, v = new, v_new
    trace.summary = dict(algorithm="mirror", iterations=config.iters, final_J=trace.rows[-1]["J"],
                         final_V_gap=trace.rows[-1]["V_gap"], violations=violations)
    trace.exit_code = EXIT_VIOLATION if violations else EXIT_OK
    return trace


# ---------------------------------------------------------------- DeepSPI at tabular scale

def run_deepspi(config: ExperimentConfig) -> RunTrace:
    """On-policy clipped updates with exact advantages, a refitted world model and per-step SPI checks.

    Each step fits the latent model under the current policy's stationary
    distribution, samples a batch, applies the clipped update and checks the
    safe-improvement bound with the pre-update policy as baseline.
    """
    spec = load_env(config)
    mdp, enc = spec.mdp, spec.encoder
    cfg = SurrogateConfig(config.clip, config.alpha_r, config.alpha_p, config.learning_rate, config.epochs,
                          config.minibatches, config.seed)
    policy = SoftmaxLatentPolicy.from_probs(spec.baseline_latent.probs)
    trace = RunTrace(["iteration", "J", "J_latent", "L_R", "L_P", "SIR", "inf_IR", "in_band", "spi_verdict",
                      "spi_slack"])
    counts = {"holds": 0, "violated": 0, "not-applicable": 0}
    for step in range(1, config.steps + 1):
        base = policy.to_tabular()
        ground = enc.compose(base)
        xi = stationary_distribution(mdp, ground)
        latent = fit_latent_model(mdp, enc, xi)
        batch = sample_transitions(mdp, ground, config.batch_size, seed=config.seed * 1_000_003 + step)
        new = clipped_update(mdp, enc, latent, policy, batch,
                             SurrogateConfig(**{**asdict(cfg), "seed": cfg.seed + step}))
        new_tab = new.to_tabular()
        ir = extremal_ir(ground, enc.compose(new_tab))
        in_band = bool(1 - cfg.epsilon_clip <= ir.inf_ir and ir.sup_ir <= 1 + cfg.epsilon_clip)
        try:
            rep = verify_spi(mdp, enc, latent, base, new_tab)
            verdict, slack = ("holds" if rep.holds else "violated"), rep.slack
        except PreconditionError:
            verdict, slack = "not-applicable", 0.0
        counts[verdict] += 1
        losses = exact_losses(mdp, enc, latent, xi, ground)
        j = evaluate_policy(mdp, enc.compose(new_tab)).v[mdp.initial_state]
        j_bar = evaluate_policy(latent.as_mdp(), new_tab).v[latent.initial_state]
        trace.add(iteration=step, J=float(j), J_latent=float(j_bar), L_R=losses.l_r, L_P=losses.l_p,
                  SIR=ir.sup_ir, inf_IR=ir.inf_ir, in_band=in_band, spi_verdict=verdict, spi_slack=float(slack))
        policy = new
    j0 = evaluate_policy(mdp, spec.baseline).v[mdp.initial_state]
    final = "violated" if counts["violated"] else ("holds" if counts["holds"] else "not-applicable")
    trace.summary = dict(algorithm="deepspi", env=spec.name, steps=config.steps, baseline_J=float(j0),
                         final_J=trace.rows[-1]["J"], final_policy=policy.probs().tolist(),
                         spi_counts=counts, verify_spi=final)
    trace.exit_code = EXIT_VIOLATION if counts["violated"] else EXIT_OK
    return trace


# ---------------------------------------------------------------- DreamSPI evaluation

def dream_evaluate(latent, latent_policy, horizon: int, count: int, seed: int, bootstrap: bool = True):
    """Monte Carlo return from the latent initial state vs the exact latent value."""
    lat = latent.as_mdp() if hasattr(latent, "as_mdp") else latent
    exact = evaluate_policy(lat, latent_policy).v
    starts = np.zeros(latent.n_latent)
    starts[latent.initial_state] = 1.0
    batch = imagine_rollouts(latent, latent_policy, starts, horizon, count, seed)
    returns = batch.discounted_returns(exact if bootstrap else None)
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / math.sqrt(count)) if count > 1 else float("inf")
    return mean, se, float(exact[latent.initial_state])


def run_dream_eval(config: ExperimentConfig) -> RunTrace:
    trace = RunTrace(["instance", "mc_mean", "se", "exact", "z", "within_3se"])
    misses = 0
    for i in range(config.instances):
        rng = np.random.default_rng([config.seed, i])
        n_latent = int(rng.integers(2, 9))
        n_actions = int(rng.integers(1, 5))
        latent = random_latent_model(n_latent, n_actions, seed=int(rng.integers(2**31)), gamma=0.9)
        policy = TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_latent))
        mean, se, exact = dream_evaluate(latent, policy, config.horizon, config.rollouts, seed=int(rng.integers(2**31)))
        z = (mean - exact) / se if se > 0 else 0.0
        ok = abs(mean - exact) <= 3 * se + 1e-12
        misses += not ok
        trace.add(instance=i, mc_mean=mean, se=se, exact=exact, z=float(z), within_3se=ok)
    trace.summary = dict(algorithm="dreamspi-eval", instances=config.instances, misses=misses)
    trace.exit_code = EXIT_VIOLATION if misses else EXIT_OK
    return trace


# ---------------------------------------------------------------- randomized bound suite

BOUND_COLUMNS = ["instance", "theorem", "lhs", "rhs", "slack", "holds", "vacuous", "inputs_digest"]


def suite_instance(seed: int, index: int, gamma=None, max_states: int = 12, max_actions: int = 4):
    """One random episodic instance with a random candidate inside N^C(baseline), C < 1/gamma."""
    rng = np.random.default_rng([seed, index])
    if gamma is None:
        gamma = (0.9, 0.95, 0.99)[index % 3]
    spec = random_episodic(int(rng.integers(3, max_states + 1)), int(rng.integers(1, max_actions + 1)),
                           seed=int(rng.integers(2**31)), gamma=gamma)
    c_max = min(2.0, 1.0 / gamma)
    c = 1.0 + (c_max - 1.0) * float(rng.uniform(0.05, 0.99))
    candidate = random_neighbor(spec.baseline_latent, c, rng)
    return spec, candidate


def _suite_reports(args):
    seed, index, epsilon, trials = args
    spec, cand = suite_instance(seed, index)
    mdp, enc, lat = spec.mdp, spec.encoder, spec.latent
    reports = [
        verify_avd(mdp, enc, lat, spec.baseline, cand),
        verify_value_bound(mdp, enc, lat, spec.baseline, cand),
        verify_spi(mdp, enc, lat, spec.baseline_latent, cand),
    ]
    v_range = 2 * mdp.r_max / (1 - mdp.discount)
    reports.append(verify_representation_quality(mdp, enc, lat, spec.baseline, cand, epsilon=epsilon * v_range,
                                                 trials=trials, seed=index))
    return [r.to_dict() for r in reports]


def run_verify_suite(config: ExperimentConfig) -> RunTrace:
    """All bound checkers on `instances` random instances; one row per instance and bound.

    The representation-quality check uses epsilon as a fraction of the value range.
    """
    jobs = [(config.seed, i, config.epsilon, config.trials) for i in range(config.instances)]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_reports, jobs))
    else:
        results = [_suite_reports(j) for j in jobs]
    trace = RunTrace(list(BOUND_COLUMNS))
    details = []
    for i, reps in enumerate(results):
        for r in reps:
            trace.add(instance=i, theorem=r["name"], lhs=r["lhs"], rhs=r["rhs"], slack=r["slack"], holds=r["holds"],
                      vacuous=r["vacuous"], inputs_digest=r["inputs_digest"])
            details.append(dict(r, instance=i))
    trace.summary = summarize_bounds(trace.rows)
    trace.summary["algorithm"] = "verify"
    if config.verbose:
        trace.summary["details"] = details
    trace.exit_code = EXIT_VIOLATION if trace.summary["violations"] else EXIT_OK
    return trace


def summarize_bounds(rows) -> dict:
    by = {}
    for r in rows:
        by.setdefault(r["theorem"], []).append(r)
    out = {}
    for name in sorted(by):
        group = by[name]
        slacks = [float(r["slack"]) for r in group]
        out[name] = dict(count=len(group), holds=sum(_truthy(r["holds"]) for r in group),
                         vacuous=sum(_truthy(r["vacuous"]) for r in group), min_slack=min(slacks),
                         median_slack=statistics.median(slacks))
    violations = sum(v["count"] - v["holds"] for v in out.values())
    return dict(theorems=out, violations=violations)


def _truthy(x) -> bool:
    return x is True or x == "true" or x == "True"


# ---------------------------------------------------------------- PAC suite

def run_pac_suite(config: ExperimentConfig) -> RunTrace:
    """Coverage of the PAC error estimate over `trials` data sets, both cases, per instance."""
    trace = RunTrace(["instance", "case", "T_max", "zeta", "zeta_hat_mean", "coverage", "rhs_miss_rate", "holds"])
    violations = 0
    trials = min(config.trials, 10_000)
    for i in range(config.instances):
        spec, cand = suite_instance(config.seed, i, gamma=0.9, max_states=8, max_actions=3)
        ael = average_episode_length(spec.mdp, spec.baseline)
        for L in (1.25 * ael, None):
            pc = PacConfig(config.epsilon, config.delta, L, seed=config.seed * 7919 + i)
            rep = pac_verify(spec.mdp, spec.encoder, spec.latent, spec.baseline_latent, cand, pc, trials=trials)
            violations += not rep.holds
            comp = rep.components
            trace.add(instance=i, case=int(comp["case"]), T_max=int(comp["T_max"]), zeta=comp["zeta"],
                      zeta_hat_mean=comp["zeta_hat_mean"], coverage=comp["coverage"], rhs_miss_rate=rep.rhs,
                      holds=rep.holds)
    trace.summary = dict(algorithm="pac", instances=config.instances, trials=trials, violations=violations)
    trace.exit_code = EXIT_VIOLATION if violations else EXIT_OK
    return trace


RUNNERS = {"mirror": run_mirror, "deepspi": run_deepspi, "dreamspi-eval": run_dream_eval,
           "verify": run_verify_suite, "pac": run_pac_suite}


def run(config: ExperimentConfig) -> RunTrace:
    config.validate()
    return RUNNERS[config.algorithm](config)


# ---------------------------------------------------------------- demos

def env_to_dict(spec: EnvSpec) -> dict:
    return {"name": spec.name, "params": _plain(spec.params), "mdp": io.mdp_to_dict(spec.mdp),
            "encoder": io.encoder_to_dict(spec.encoder), "latent": io.latent_to_dict(spec.latent),
            "baseline_latent": io.policy_to_dict(spec.baseline_latent)}


def demo(name: str, params: dict):
    """Builds a counterexample and returns (spec, narrative lines, claims_hold)."""
    if name == "fig1":
        spec = build_fig1(**params)
        mdp = spec.mdp
        planned = latent_optimal_policy(spec.latent)
        j_base = evaluate_policy(mdp, spec.baseline).v[0]
        j_plan = evaluate_policy(mdp, spec.encoder.compose(planned)).v[0]
        xi = stationary_distribution(mdp, spec.baseline)
        losses = exact_losses(mdp, spec.encoder, spec.latent, xi, spec.baseline)
        picks_a2 = bool(planned.probs[0, 1] == 1.0)
        lines = [
            "Out-of-trajectory world model",
            f"  baseline plays a2 in S1 with probability {spec.params['epsilon']:g}",
            f"  world model reward at s3' = {spec.params['hallucinated_reward']:g} (true: {spec.params['s3_reward']:g})",
            f"  local losses under the baseline: L_R = {losses.l_r:.6g}, L_P = {losses.l_p:.6g}",
            f"  latent-optimal policy plays a2 at s1_bar: {picks_a2}",
            f"  ground return: baseline {j_base:.6g}, planned policy {j_plan:.6g}",
        ]
        ok = picks_a2 and j_plan < j_base and losses.l_r < 0.05 * mdp.r_max
        return spec, lines, ok
    if name == "fig2":
        spec = build_fig2(**params)
        mdp = spec.mdp
        merged = fig2_merged_update(spec)
        split = fig2_split_update(spec)
        j_base = evaluate_policy(mdp, spec.baseline).v[0]
        j_merged = evaluate_policy(mdp, spec.encoder.compose(merged)).v[0]
        j_split = evaluate_policy(mdp, split).v[0]
        v = evaluate_policy(mdp, spec.baseline).v
        lines = [
            "Confounding policy update",
            f"  |V_b(s2) - V_b(s3)| = {abs(v[1] - v[2]):.6g}: merging s2 and s3 looks harmless",
            f"  ground return: baseline {j_base:.6g}",
            f"  merged encoder, a2 everywhere in the merged latent: {j_merged:.6g}",
            f"  split encoder, greedy update: {j_split:.6g}",
        ]
        ok = j_merged < 0 and j_merged < j_base and j_split > j_base
        return spec, lines, ok
    raise ConfigError(f"unknown demo {name!r}; choose fig1 or fig2")


# ---------------------------------------------------------------- solve

def solve_summary(mdp: FiniteMdp, policy: Optional[TabularPolicy] = None) -> dict:
    v_star, greedy = value_iteration(mdp)
    out = {"v_star": v_star.tolist(), "greedy_policy": greedy.probs.tolist()}
    if policy is not None:
        vt = evaluate_policy(mdp, policy)
        out["v"] = vt.v.tolist()
        out["q"] = vt.q.tolist()
        out["J"] = float(vt.v[mdp.initial_state])
        out["stationary"] = stationary_distribution(mdp, policy).xi.tolist()
        out["discounted_occupancy"] = discounted_occupancy(mdp, policy).xi.tolist()
        if mdp.reset_state is not None:
            out["average_episode_length"] = average_episode_length(mdp, policy)
    return out


# ---------------------------------------------------------------- report

def read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def report(paths) -> dict:
    """Aggregate traces sharing one schema: bound slacks or return/loss statistics."""
    if not paths:
        return {"traces": 0}
    header = None
    traces = []
    for p in paths:
        cols, rows = read_trace(p)
        if header is None:
            header = cols
        elif cols != header:
            raise ConfigError(f"trace {p} does not share the schema of {paths[0]}")
        traces.append((str(p), rows))
    out = {"traces": len(traces), "schema": header}
    if "theorem" in header:
        out.update(summarize_bounds([r for _, rows in traces for r in rows]))
        return out
    if "J" in header:
        per = []
        for p, rows in traces:
            js = [float(r["J"]) for r in rows]
            steps = [b - a for a, b in zip(js, js[1:])]
            per.append(dict(path=p, first_J=js[0], last_J=js[-1], improvement=js[-1] - js[0],
                            min_step=min(steps) if steps else 0.0, iterations=len(js)))
        out["runs"] = per
        out["mean_improvement"] = statistics.fmean(r["improvement"] for r in per)
        return out
    out["rows"] = sum(len(rows) for _, rows in traces)
    return out


def plot_rows(paths):
    """Long-format rows (trace, iteration, J and loss columns when present) for plotting."""
    rows = []
    for p in paths:
        cols, data = read_trace(p)
        if "iteration" not in cols or "J" not in cols:
            continue
        for r in data:
            rows.append({"trace": str(p), "iteration": r["iteration"], "J": r["J"],
                         "L_R": r.get("L_R", ""), "L_P": r.get("L_P", "")})
    return rows
