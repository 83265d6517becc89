import numpy as np
import pytest
import torch

from spoofdiff.data import SynthConfig, load_manifest, synth_corpus
from spoofdiff.errors import DataError
from spoofdiff.style_encoder import (
    ConditionStack,
    StyleEncoder,
    StyleEncoderConfig,
    encode_style,
    load_style_encoder,
    save_style_encoder,
    train_style_encoder,
)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = synth_corpus(SynthConfig(identities=24, styles=3, size=64, seed=1), out)
    return load_manifest(manifest)


class TestEncodeStyle:
    def setup_method(self):
        torch.manual_seed(0)
        self.encoder = StyleEncoder(StyleEncoderConfig(num_styles=4))

    def test_condition_resolutions_for_64px_input(self):
        stack = encode_style(self.encoder, torch.randn(3, 64, 64))
        assert stack.resolutions == (32, 16)

    def test_identical_guides_identical_stacks(self):
        guide = torch.randn(3, 64, 64, generator=torch.Generator().manual_seed(1))
        a = encode_style(self.encoder, guide)
        b = encode_style(self.encoder, guide)
        for ma, mb in zip(a.maps, b.maps):
            assert torch.equal(ma, mb)

    def test_wrong_guide_size_rejected(self):
        with pytest.raises(ValueError):
            encode_style(self.encoder, torch.randn(3, 32, 32))

    def test_batched_guides(self):
        stack = encode_style(self.encoder, torch.randn(2, 3, 64, 64))
        assert stack.maps[0].shape[0] == 2

    def test_condition_channels_follow_config(self):
        assert self.encoder.condition_channels == ((32, 32), (16, 64))


class TestConditionStack:
    def test_resolutions_must_decrease(self):
        with pytest.raises(ValueError):
            ConditionStack(maps=(torch.randn(4, 16, 16), torch.randn(4, 32, 32)))


class TestTrainStyleEncoder:
    def test_single_style_rejected(self, small_corpus):
        lives = [r for r in small_corpus if r.is_live]
        with pytest.raises(DataError):
            train_style_encoder(lives, StyleEncoderConfig(num_styles=4), epochs=1)

    def test_distinct_styles_reach_train_accuracy(self, tmp_path):
        manifest = synth_corpus(SynthConfig(identities=60, styles=3, size=64, seed=1), tmp_path)
        records = load_manifest(manifest)
        encoder, history = train_style_encoder(
            records, StyleEncoderConfig(num_styles=4), epochs=8, batch_size=32, lr=1e-3, seed=0
        )
        assert history["train_accuracy"] >= 0.95

    def test_same_seed_identical_loss_curve(self, small_corpus):
        config = StyleEncoderConfig(num_styles=4, stage_channels=(16, 32, 48))
        _, h1 = train_style_encoder(small_corpus, config, epochs=2, seed=3)
        _, h2 = train_style_encoder(small_corpus, config, epochs=2, seed=3)
        assert h1["loss_curve"] == h2["loss_curve"]

    def test_different_styles_give_different_stacks(self, small_corpus):
        from spoofdiff.images import load_image_tensor

        config = StyleEncoderConfig(num_styles=4, stage_channels=(16, 32, 48))
        encoder, _ = train_style_encoder(small_corpus, config, epochs=4, seed=0)
        by_style = {}
        for r in small_corpus:
            if not r.is_live:
                by_style.setdefault(r.style_id, r)
        a = encode_style(encoder, load_image_tensor(by_style[0].path))
        b = encode_style(encoder, load_image_tensor(by_style[1].path))
        gaps = [float(torch.norm(ma - mb)) for ma, mb in zip(a.maps, b.maps)]
        assert max(gaps) > 0.0


class TestCheckpoint:
    def test_roundtrip_and_freeze(self, tmp_path):
        torch.manual_seed(5)
        encoder = StyleEncoder(StyleEncoderConfig(num_styles=3))
        path = tmp_path / "enc.ckpt"
        save_style_encoder(path, encoder, {"train_accuracy": 1.0}, seed=5)
        loaded, payload = load_style_encoder(path)
        assert payload["num_styles"] == 3
        assert payload["stage_channels"] == (32, 64, 96)
        assert all(not p.requires_grad for p in loaded.parameters())
        guide = torch.randn(3, 64, 64, generator=torch.Generator().manual_seed(6))
        a = encode_style(encoder, guide)
        b = encode_style(loaded, guide)
        for ma, mb in zip(a.maps, b.maps):
            assert torch.allclose(ma, mb)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        torch.save({"kind": "other"}, path)
        with pytest.raises(DataError):
            load_style_encoder(path)
