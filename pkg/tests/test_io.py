import numpy as np
import pytest

from spi_lab import envs, io
from spi_lab.losses import LossReport
from spi_lab.mdp import sample_transitions


def test_mdp_round_trip(tmp_path):
    spec = envs.build_fig2()
    io.write_json(tmp_path / "m.json", io.mdp_to_dict(spec.mdp))
    back = io.mdp_from_dict(io.read_json(tmp_path / "m.json"))
    assert np.array_equal(back.transition, spec.mdp.transition) and back.reset_state == spec.mdp.reset_state


def test_latent_encoder_policy_round_trip():
    spec = envs.build_fig1()
    lat = io.latent_from_dict(io.latent_to_dict(spec.latent))
    assert np.array_equal(lat.reward, spec.latent.reward) and np.array_equal(lat.metric, spec.latent.metric)
    enc = io.encoder_from_dict(io.encoder_to_dict(spec.encoder))
    assert np.array_equal(enc.mapping, spec.encoder.mapping)
    pol = io.policy_from_dict(io.policy_to_dict(spec.baseline))
    assert np.array_equal(pol.probs, spec.baseline.probs)


def test_size_mismatch_rejected():
    d = io.mdp_to_dict(envs.build_fig2().mdp)
    d["n_states"] = 7
    with pytest.raises(ValueError, match="n_states"):
        io.mdp_from_dict(d)


def test_batch_csv_round_trip(tmp_path):
    spec = envs.build_fig2()
    b = sample_transitions(spec.mdp, spec.baseline, 50, seed=0)
    io.write_batch_csv(tmp_path / "b.csv", b)
    back = io.read_batch_csv(tmp_path / "b.csv")
    assert all(np.array_equal(getattr(b, f), getattr(back, f)) for f in ("s", "a", "r", "s_next"))
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        io.read_batch_csv(tmp_path / "bad.csv")


def test_loss_report_json():
    rep = LossReport(0.1, 0.2, "empirical", 10)
    assert io.loss_report_from_json(io.loss_report_to_json(rep)) == rep
