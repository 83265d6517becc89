import numpy as np
import pytest
import torch

from spoofdiff.config import default_config
from spoofdiff.data import SynthConfig, load_manifest, synth_corpus
from spoofdiff.style_encoder import StyleEncoderConfig, train_style_encoder
from spoofdiff.training import train_diffusion


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_corpus")
    manifest = synth_corpus(SynthConfig(identities=6, styles=2, size=64, seed=0), out)
    records = load_manifest(manifest)
    encoder, _ = train_style_encoder(
        records, StyleEncoderConfig(num_styles=3, stage_channels=(8, 16, 24)), epochs=1, seed=0
    )
    return records, encoder


def tiny_config(steps=6, seed=0):
    cfg = default_config()
    cfg.update(
        {
            "seed": seed,
            "denoiser.base_channels": 16,
            "denoiser.res_blocks": 1,
            "optimizer.steps": steps,
            "optimizer.batch_size": 4,
        }
    )
    return cfg


def test_trainer_runs_and_logs(setup):
    records, encoder = setup
    model, schedule, history = train_diffusion(records, encoder, tiny_config())
    assert len(history["loss_curve"]) == 6
    assert all(np.isfinite(history["loss_curve"]))
    assert schedule.timesteps == 1000
    assert model.config.cond_channels == encoder.condition_channels


def test_trainer_deterministic(setup):
    records, encoder = setup
    _, _, h1 = train_diffusion(records, encoder, tiny_config(seed=5))
    _, _, h2 = train_diffusion(records, encoder, tiny_config(seed=5))
    assert h1["loss_curve"] == h2["loss_curve"]


def test_trained_models_bitwise_equal_for_equal_seeds(setup):
    records, encoder = setup
    m1, _, _ = train_diffusion(records, encoder, tiny_config(steps=3, seed=9))
    m2, _, _ = train_diffusion(records, encoder, tiny_config(steps=3, seed=9))
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(a, b)
