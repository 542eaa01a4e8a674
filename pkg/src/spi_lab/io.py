"""JSON and CSV formats for MDPs, encoders, latent models, policies and batches."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .latent import Encoder, LatentMdp
from .losses import LossReport
from .mdp import FiniteMdp, TabularPolicy, TransitionBatch

BATCH_HEADER = ["s", "a", "r", "s_next"]


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "discount": mdp.discount,
        "initial_state": mdp.initial_state,
        "reset_state": mdp.reset_state,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    }


def _check_sizes(d: dict, n: int, n_actions: int, what: str):
    if "n_states" in d and d["n_states"] != n:
        raise ValueError(f"{what}: n_states does not match the transition tensor")
    if "n_actions" in d and d["n_actions"] != n_actions:
        raise ValueError(f"{what}: n_actions does not match the transition tensor")


def mdp_from_dict(d: dict) -> FiniteMdp:
    P = np.asarray(d["transition"], dtype=float)
    if P.ndim != 3:
        raise ValueError("mdp: transition must be a 3-level nested list")
    _check_sizes(d, P.shape[0], P.shape[1], "mdp")
    return FiniteMdp(P, np.asarray(d["reward"], dtype=float), d["initial_state"], d["discount"],
                     d.get("reset_state"))


def latent_to_dict(latent: LatentMdp) -> dict:
    return {
        "n_states": latent.n_latent,
        "n_actions": latent.n_actions,
        "discount": latent.discount,
        "initial_state": latent.initial_state,
        "reset_state": latent.reset_state,
        "transition": latent.transition.tolist(),
        "reward": latent.reward.tolist(),
        "metric": latent.metric.tolist(),
    }


def latent_from_dict(d: dict) -> LatentMdp:
    P = np.asarray(d["transition"], dtype=float)
    _check_sizes(d, P.shape[0], P.shape[1], "latent mdp")
    metric = d.get("metric")
    if metric is None:
        metric = 1.0 - np.eye(P.shape[0])
    return LatentMdp(P, np.asarray(d["reward"], dtype=float), d["initial_state"], d["discount"],
                     np.asarray(metric, dtype=float), d.get("reset_state"))


def encoder_to_dict(encoder: Encoder) -> dict:
    return {"mapping": encoder.mapping.tolist(), "n_latent": encoder.n_latent}


def encoder_from_dict(d: dict) -> Encoder:
    return Encoder(np.asarray(d["mapping"], dtype=int), int(d["n_latent"]))


def policy_to_dict(policy: TabularPolicy) -> dict:
    return {"probs": policy.probs.tolist()}


def policy_from_dict(d) -> TabularPolicy:
    probs = d["probs"] if isinstance(d, dict) else d
    return TabularPolicy(np.asarray(probs, dtype=float))


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_batch_csv(path, batch: TransitionBatch) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BATCH_HEADER)
        for row in zip(batch.s, batch.a, batch.r, batch.s_next):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), int(row[3])])


def read_batch_csv(path) -> TransitionBatch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BATCH_HEADER:
            raise ValueError(f"batch CSV must start with header {','.join(BATCH_HEADER)}")
        rows = [r for r in reader if r]
    if not rows:
        empty = np.zeros(0, dtype=int)
        return TransitionBatch(empty, empty, np.zeros(0), empty)
    cols = list(zip(*rows))
    return TransitionBatch(np.array(cols[0], dtype=int), np.array(cols[1], dtype=int),
                           np.array(cols[2], dtype=float), np.array(cols[3], dtype=int))


def loss_report_to_json(report: LossReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True)


def loss_report_from_json(text: str) -> LossReport:
    return LossReport(**json.loads(text))
