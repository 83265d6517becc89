"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Criteria 1-7 are property and worked-example checks; 8 and 9 are the
desk-scale smoke runs (synthetic corpus, real training) and dominate the
runtime.  Run with `pytest tests/test_acceptance.py -v -s` to watch the
per-criterion lines.
"""

import math
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from oracles import (
    oracle_attention,
    oracle_auc,
    oracle_eer_threshold,
    oracle_hter,
    oracle_patch_stats,
)
from spoofdiff.classifier import (
    ClassifierConfig,
    live_class_ids,
    liveness_scores,
    train_classifier,
)
from spoofdiff.data import SynthConfig, load_manifest, synth_corpus
from spoofdiff.diffusion import build_schedule, forward_diffuse, forward_step
from spoofdiff.images import load_image_tensor, load_rgb
from spoofdiff.margin_loss import (
    MarginParams,
    equivalent_additive_margin,
    relative_quality_loss,
    scaled_cross_entropy,
)
from spoofdiff.metrics import FixedThreshold, evaluate
from spoofdiff.quality import ProxyScorer, relative_quality, score_image
from spoofdiff.sampler import SamplerConfig, cfg_predict, edit_sample, edit_sample_batch
from spoofdiff.style_encoder import StyleEncoderConfig, encode_style, train_style_encoder
from spoofdiff.style_fusion import (
    MEAN,
    VARIANCE,
    StatAttention,
    StyleFusionBlock,
    StyleFusionSpec,
    fuse_statistics,
    patch_statistics,
)
from spoofdiff.training import train_diffusion


def report(criterion: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {criterion}] {status}{' - ' + detail if detail else ''}")
    assert ok, f"criterion {criterion} failed: {detail}"


# -------------------------------------------------------------------------
# criterion 1: relative-quality worked example and invariances
# -------------------------------------------------------------------------


def test_criterion_1_relative_quality():
    t0 = time.time()
    batch = relative_quality([10.0, 20.0, 30.0, 40.0])
    worked = np.abs(
        batch.b_rq - np.array([0.4472, 0.1491, -0.1491, -0.4472])
    ).max() < 1e-4

    rng = np.random.default_rng(0)
    affine_ok = True
    for _ in range(25):
        scores = rng.normal(40.0, 9.0, size=rng.integers(2, 50))
        gap = np.abs(
            relative_quality(scores).b_rq - relative_quality(3.0 * scores + 17.0).b_rq
        ).max()
        affine_ok &= gap < 1e-9

    degenerate = relative_quality([4.2] * 7)
    zeros_ok = np.array_equal(degenerate.b_rq, np.zeros(7))

    runtime = time.time() - t0
    report(
        "1",
        worked and affine_ok and zeros_ok and runtime < 1.0,
        f"worked={worked} affine={affine_ok} degenerate={zeros_ok} runtime={runtime:.3f}s",
    )


# -------------------------------------------------------------------------
# criterion 2: margin-loss reductions and gradient agreement
# -------------------------------------------------------------------------


def test_criterion_2_rq_loss_reductions():
    t0 = time.time()
    rng = np.random.default_rng(1)

    def batch(n, c):
        cos = torch.from_numpy(rng.uniform(-0.95, 0.95, size=(n, c)))
        labels = torch.from_numpy(rng.integers(0, c, size=n))
        b_rq = torch.from_numpy(rng.uniform(-0.5, 0.5, size=n))
        is_live = torch.from_numpy(rng.random(n) < 0.5)
        return cos, labels, b_rq, is_live

    # b_rq = 0 -> additive-margin (CosFace-style) softmax
    margin_gap = 0.0
    params = MarginParams(s_live=0.4, s_spoof=0.2, m=10.0)
    for _ in range(10):
        cos, labels, _, is_live = batch(8, 6)
        got = relative_quality_loss(cos, labels, torch.zeros(8), is_live, params)
        s = torch.where(
            is_live,
            torch.tensor(0.4, dtype=torch.float64),
            torch.tensor(0.2, dtype=torch.float64),
        )
        logits = cos.clone()
        logits.scatter_(
            1, labels[:, None], (params.m * (cos.gather(1, labels[:, None]).squeeze(1) - s))[:, None]
        )
        margin_gap = max(margin_gap, abs(float(got) - float(F.cross_entropy(logits, labels))))

    # s = 0 -> scaled cross-entropy
    ce_gap = 0.0
    params0 = MarginParams(s_live=0.0, s_spoof=0.0, m=24.0, scale_all_logits=True)
    for _ in range(10):
        cos, labels, b_rq, is_live = batch(8, 6)
        got = relative_quality_loss(cos, labels, b_rq, is_live, params0)
        ce_gap = max(ce_gap, abs(float(got) - float(scaled_cross_entropy(cos, labels, 24.0))))

    # finite-difference gradients on 20 random batches
    grad_ok = True
    params_g = MarginParams(s_live=0.4, s_spoof=0.2, m=6.0)
    for _ in range(20):
        n, c = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        cos, labels, b_rq, is_live = batch(n, c)
        cos = cos.requires_grad_(True)
        relative_quality_loss(cos, labels, b_rq, is_live, params_g).backward()
        h = 1e-6
        for _ in range(2):
            i, j = int(rng.integers(n)), int(rng.integers(c))
            up, down = cos.detach().clone(), cos.detach().clone()
            up[i, j] += h
            down[i, j] -= h
            fd = (
                float(relative_quality_loss(up, labels, b_rq, is_live, params_g))
                - float(relative_quality_loss(down, labels, b_rq, is_live, params_g))
            ) / (2 * h)
            grad_ok &= abs(float(cos.grad[i, j]) - fd) / max(abs(fd), 1e-8) < 1e-4

    runtime = time.time() - t0
    report(
        "2",
        margin_gap < 1e-9 and ce_gap < 1e-9 and grad_ok and runtime < 10.0,
        f"margin_gap={margin_gap:.2e} ce_gap={ce_gap:.2e} grads={grad_ok} runtime={runtime:.2f}s",
    )


# -------------------------------------------------------------------------
# criterion 3: equivalent additive margin values
# -------------------------------------------------------------------------


def test_criterion_3_equivalent_additive_margin():
    values = {
        (0.5, 0.3): 0.5603,
        (0.5, 1.047): 0.4374,
        (-0.5, 0.3): 0.2777,
        (-0.5, 1.047): 0.3821,
    }
    gaps = {
        key: abs(equivalent_additive_margin(b, theta, 0.4) - want)
        for (b, theta), want in values.items()
        for key in [(b, theta)]
    }
    within = all(gap < 1e-3 for gap in gaps.values())
    hq_grows = equivalent_additive_margin(0.5, 0.3, 0.4) > equivalent_additive_margin(0.5, 1.047, 0.4)
    lq_shrinks = equivalent_additive_margin(-0.5, 0.3, 0.4) < equivalent_additive_margin(-0.5, 1.047, 0.4)
    report(
        "3",
        within and hq_grows and lq_shrinks,
        f"max_gap={max(gaps.values()):.2e} hq_grows={hq_grows} lq_shrinks={lq_shrinks}",
    )


# -------------------------------------------------------------------------
# criterion 4: diffusion identities, moments, round trip
# -------------------------------------------------------------------------


def test_criterion_4_diffusion_identities():
    t0 = time.time()
    schedule = build_schedule(1000, 1e-4, 0.02)

    gen = torch.Generator().manual_seed(2)
    x0 = torch.randn(3, 8, 8, generator=gen)
    eps = torch.randn(3, 8, 8, generator=gen)
    exact = torch.equal(
        forward_diffuse(x0, 77, torch.zeros_like(x0), schedule),
        math.sqrt(schedule.alpha_bar(77)) * x0,
    ) and torch.equal(
        forward_diffuse(torch.zeros_like(eps), 77, eps, schedule),
        math.sqrt(1.0 - schedule.alpha_bar(77)) * eps,
    )

    moments_ok = True
    detail = []
    for t_star in (10, 100, 500):
        g = torch.Generator().manual_seed(8)
        base = torch.full((1, 100, 100), 0.3, dtype=torch.float64)
        x = base
        for t in range(1, t_star + 1):
            x = forward_step(x, t, schedule, g)
        closed = forward_diffuse(
            base, t_star, torch.randn(base.shape, generator=g, dtype=torch.float64), schedule
        )
        mean_gap = abs(float(x.mean()) - float(closed.mean()))
        var_gap = abs(float(x.var(unbiased=True)) - float(closed.var(unbiased=True)))
        var_rel = var_gap / (1.0 - schedule.alpha_bar(t_star))
        moments_ok &= mean_gap < 0.01 and var_rel < 0.02
        detail.append(f"t{t_star}:mean{mean_gap:.4f}/var{var_rel:.4f}")

    class Oracle:
        def __call__(self, x_t, live, t, cond):
            abar = schedule.alpha_bar(t)
            return (x_t - math.sqrt(abar) * live) / math.sqrt(1.0 - abar)

    live = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    out = edit_sample(
        live,
        live,
        SamplerConfig(gamma=1.0, t_start=100, seed=3),
        schedule,
        Oracle(),
        lambda g_: "cond",
    )
    round_trip = float((out - live).abs().max())

    runtime = time.time() - t0
    report(
        "4",
        exact and moments_ok and round_trip < 1e-4 and runtime < 120.0,
        f"exact={exact} {' '.join(detail)} round_trip={round_trip:.2e} runtime={runtime:.1f}s",
    )


# -------------------------------------------------------------------------
# criterion 5: classifier-free guidance identities
# -------------------------------------------------------------------------


def test_criterion_5_cfg_identities():
    gen = torch.Generator().manual_seed(4)
    x = torch.randn(3, 8, 8, generator=gen)
    live = torch.randn(3, 8, 8, generator=gen)

    def denoiser(x_t, live_img, t, cond):
        # asymmetric so conditional/unconditional disagree everywhere
        return x_t * 0.5 + (1.0 if cond is not None else -1.0)

    bitwise = torch.equal(
        cfg_predict(denoiser, x, live, 9, "c", 1.0), denoiser(x, live, 9, "c")
    ) and torch.equal(
        cfg_predict(denoiser, x, live, 9, "c", 0.0), denoiser(x, live, 9, None)
    )

    const = lambda value: (lambda x_t, l, t, c: torch.full_like(x_t, value))

    class TwoValue:
        def __call__(self, x_t, l, t, cond):
            return torch.full_like(x_t, 0.75 if cond is not None else 0.25)

    arithmetic = torch.equal(
        cfg_predict(TwoValue(), x, live, 9, "c", 2.0),
        torch.full_like(x, 2 * 0.75 - 0.25),
    )
    report("5", bitwise and arithmetic, f"bitwise={bitwise} arithmetic={arithmetic}")


# -------------------------------------------------------------------------
# criterion 6: style fusion vs brute-force oracles
# -------------------------------------------------------------------------


def test_criterion_6_style_fusion():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        side = int(rng.choice([4, 8, 12, 16, 24, 32]))
        patch = int(rng.choice([p for p in range(1, side + 1) if side % p == 0]))
        kind = MEAN if rng.random() < 0.5 else VARIANCE
        fmap = rng.normal(size=(int(rng.integers(1, 4)), side, side))
        got = patch_statistics(torch.from_numpy(fmap), patch, kind).tokens.numpy()
        worst = max(worst, float(np.abs(got - oracle_patch_stats(fmap, patch, kind)).max()))
    stats_ok = worst < 1e-5

    torch.manual_seed(6)
    block = StyleFusionBlock(8, 5, StyleFusionSpec(mean_patch=4, var_patch=2))
    x = torch.randn(2, 8, 16, 16)
    cond_map = torch.randn(2, 5, 16, 16)
    identity_ok = torch.equal(block(x, cond_map), x)

    attn = StatAttention(6).double()
    q_tokens = torch.randn(9, 6, dtype=torch.float64)
    kv_tokens = torch.randn(13, 6, dtype=torch.float64)
    with torch.no_grad():
        got = attn(q_tokens.unsqueeze(0), kv_tokens.unsqueeze(0)).squeeze(0).numpy()
        want = oracle_attention(
            attn.q(q_tokens).numpy(), attn.k(kv_tokens).numpy(), attn.v(kv_tokens).numpy()
        )
    attn_gap = float(np.abs(got - want).max())

    report(
        "6",
        stats_ok and identity_ok and attn_gap < 1e-5,
        f"patch_stats_worst={worst:.2e} zero_init_identity={identity_ok} attn_gap={attn_gap:.2e}",
    )


# -------------------------------------------------------------------------
# criterion 7: metrics vs oracles
# -------------------------------------------------------------------------


def test_criterion_7_metrics():
    rng = np.random.default_rng(7)
    exact = True
    for _ in range(50):
        n = int(rng.integers(2, 101))
        scores = np.round(rng.random(n), 3)
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 0, 1
        tau = float(rng.random())
        rep = evaluate(scores, labels, FixedThreshold(tau))
        exact &= rep.auc == oracle_auc(scores, labels)
        exact &= rep.hter == oracle_hter(scores, labels, tau)
        tau_eer = oracle_eer_threshold(scores, labels)
        exact &= evaluate(scores, labels, FixedThreshold(tau_eer)).hter == oracle_hter(
            scores, labels, tau_eer
        )
    worked = evaluate([0.9, 0.4, 0.1, 0.6], [1, 1, 0, 0], FixedThreshold(0.5))
    worked_ok = worked.hter == 0.5 and worked.auc == 0.75
    report("7", exact and worked_ok, f"oracle_exact={exact} worked={worked_ok}")
