import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from spoofdiff.margin_loss import (
    MarginParams,
    equivalent_additive_margin,
    margin_adjusted_cosine,
    quality_margins,
    relative_quality_loss,
    scaled_cross_entropy,
)


class TestQualityMargins:
    def test_zero_relative_quality_is_pure_additive(self):
        assert quality_margins(0.0, 0.4) == (0.0, pytest.approx(0.4))

    def test_worked_examples(self):
        psi, omega = quality_margins(0.5, 0.4)
        assert psi == pytest.approx(-0.2)
        assert omega == pytest.approx(0.6)
        psi, omega = quality_margins(-0.5, 0.2)
        assert psi == pytest.approx(0.1)
        assert omega == pytest.approx(0.1)


class TestMarginAdjustedCosine:
    def test_disabled_margins(self):
        for theta in (0.0, 0.7, 2.0):
            assert margin_adjusted_cosine(theta, 0.0, 0.7) == pytest.approx(math.cos(theta))
        assert margin_adjusted_cosine(0.0, 0.0, 0.3) == pytest.approx(1.0)

    def test_worked_values(self):
        assert margin_adjusted_cosine(math.pi / 3, 0.4, 0.0) == pytest.approx(0.1, abs=1e-9)
        # direct evaluation: cos(pi/3 - 0.1) - 0.5
        assert margin_adjusted_cosine(math.pi / 3, 0.4, 0.25) == pytest.approx(
            math.cos(math.pi / 3 - 0.1) - 0.5, abs=1e-12
        )
        assert margin_adjusted_cosine(math.pi / 3, 0.4, 0.25) == pytest.approx(0.0840, abs=1e-4)


class TestEquivalentAdditiveMargin:
    def test_high_quality_margin_grows_as_theta_shrinks(self):
        # s = 0.4; for b_rq = +0.5 the margin grows toward small theta,
        # for b_rq = -0.5 it shrinks
        assert equivalent_additive_margin(0.5, 0.3, 0.4) == pytest.approx(0.5603, abs=1e-3)
        assert equivalent_additive_margin(0.5, 1.047, 0.4) == pytest.approx(0.4374, abs=1e-3)
        assert equivalent_additive_margin(-0.5, 0.3, 0.4) == pytest.approx(0.2777, abs=1e-3)
        assert equivalent_additive_margin(-0.5, 1.047, 0.4) == pytest.approx(0.3821, abs=1e-3)
        assert equivalent_additive_margin(0.5, 0.3, 0.4) > equivalent_additive_margin(0.5, 1.047, 0.4)
        assert equivalent_additive_margin(-0.5, 0.3, 0.4) < equivalent_additive_margin(-0.5, 1.047, 0.4)


def _random_batch(rng, batch=6, classes=4):
    cos = torch.from_numpy(rng.uniform(-0.95, 0.95, size=(batch, classes)))
    labels = torch.from_numpy(rng.integers(0, classes, size=batch))
    b_rq = torch.from_numpy(rng.uniform(-0.5, 0.5, size=batch))
    is_live = torch.from_numpy(rng.random(batch) < 0.5)
    return cos, labels, b_rq, is_live


class TestRelativeQualityLoss:
    def test_two_class_worked_example(self):
        cos = torch.tensor([[1.0, 0.0]])
        labels = torch.tensor([0])
        loss = relative_quality_loss(
            cos, labels, torch.zeros(1), torch.tensor([True]),
            MarginParams(s_live=0.0, s_spoof=0.0, m=1.0),
        )
        assert float(loss) == pytest.approx(-math.log(math.e / (math.e + 1.0)), abs=1e-6)

    def test_zero_rq_reduces_to_additive_margin_softmax(self):
        rng = np.random.default_rng(20)
        params = MarginParams(s_live=0.4, s_spoof=0.2, m=12.0)
        for _ in range(10):
            cos, labels, _, is_live = _random_batch(rng)
            got = relative_quality_loss(cos, labels, torch.zeros(cos.shape[0]), is_live, params)
            # CosFace-style reference: target logit m*(cos - s), others raw
            s = torch.where(
                is_live,
                torch.tensor(0.4, dtype=torch.float64),
                torch.tensor(0.2, dtype=torch.float64),
            )
            logits = cos.clone()
            tgt = cos.gather(1, labels[:, None]).squeeze(1) - s
            logits.scatter_(1, labels[:, None], (params.m * tgt)[:, None])
            want = F.cross_entropy(logits, labels)
            assert float(got) == pytest.approx(float(want), abs=1e-9)

    def test_zero_scale_reduces_to_cross_entropy(self):
        rng = np.random.default_rng(21)
        params = MarginParams(s_live=0.0, s_spoof=0.0, m=16.0, scale_all_logits=True)
        for _ in range(10):
            cos, labels, b_rq, is_live = _random_batch(rng)
            got = relative_quality_loss(cos, labels, b_rq, is_live, params)
            want = scaled_cross_entropy(cos, labels, 16.0)
            assert float(got) == pytest.approx(float(want), abs=1e-9)
        # literal (target-only) scaling coincides with plain CE at m = 1
        params_lit = MarginParams(s_live=0.0, s_spoof=0.0, m=1.0)
        cos, labels, b_rq, is_live = _random_batch(rng)
        got = relative_quality_loss(cos, labels, b_rq, is_live, params_lit)
        assert float(got) == pytest.approx(float(F.cross_entropy(cos, labels)), abs=1e-9)

    def test_loss_term_increases_with_rq_for_hard_targets(self):
        params = MarginParams(s_live=0.4, s_spoof=0.4, m=8.0)
        cos = torch.tensor([[0.7, 0.2, -0.1]], dtype=torch.float64)
        labels = torch.tensor([0])
        live = torch.tensor([True])
        values = [
            float(relative_quality_loss(cos, labels, torch.tensor([b]), live, params))
            for b in np.linspace(-0.5, 0.5, 11)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(22)
        params = MarginParams(s_live=0.4, s_spoof=0.2, m=6.0)
        for _ in range(20):
            batch = int(rng.integers(2, 9))
            classes = int(rng.integers(2, 7))
            cos, labels, b_rq, is_live = _random_batch(rng, batch, classes)
            cos = cos.clone().requires_grad_(True)
            loss = relative_quality_loss(cos, labels, b_rq, is_live, params)
            loss.backward()
            grad = cos.grad.clone()
            h = 1e-6
            for _ in range(3):
                i = int(rng.integers(batch))
                j = int(rng.integers(classes))
                up, down = cos.detach().clone(), cos.detach().clone()
                up[i, j] += h
                down[i, j] -= h
                fd = (
                    float(relative_quality_loss(up, labels, b_rq, is_live, params))
                    - float(relative_quality_loss(down, labels, b_rq, is_live, params))
                ) / (2 * h)
                denom = max(abs(fd), 1e-8)
                assert abs(float(grad[i, j]) - fd) / denom < 1e-4

    def test_nonnegative_and_label_validation(self):
        rng = np.random.default_rng(23)
        cos, labels, b_rq, is_live = _random_batch(rng)
        loss = relative_quality_loss(cos, labels, b_rq, is_live, MarginParams())
        assert float(loss) >= 0.0
        with pytest.raises(ValueError):
            relative_quality_loss(cos, labels + 10, b_rq, is_live, MarginParams())
        with pytest.raises(ValueError):
            relative_quality_loss(cos, labels, b_rq[:-1], is_live, MarginParams())

    def test_margin_params_validation(self):
        with pytest.raises(ValueError):
            MarginParams(s_live=-0.1)
        with pytest.raises(ValueError):
            MarginParams(m=0.0)
