"""Diffusion trainer: spoof reconstruction conditioned on live images and guides.

Each step draws a batch of live/spoof pairs, re-draws a same-style guide
per pair, noises the spoof targets to per-sample timesteps and regresses
the injected noise.  The whole condition stack is dropped for a batch with
probability p_uncond so the network keeps a usable unconditional path for
guidance at sampling time.
"""

from __future__ import annotations

import logging

import numpy as np
import torch

from .data import LiveSpoofPair, SampleRecord, build_pairs
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import NoiseSchedule, forward_diffuse
from .images import load_image_tensor
from .sampler import condition_dropout
from .style_encoder import StyleEncoder, encode_style

logger = logging.getLogger(__name__)


class _ImageCache:
    def __init__(self, size: int):
        self.size = size
        self._cache: dict[str, torch.Tensor] = {}

    def get(self, record: SampleRecord) -> torch.Tensor:
        img = self._cache.get(record.path)
        if img is None:
            img = load_image_tensor(record.path, self.size)
            self._cache[record.path] = img
        return img


def train_diffusion(
    records: list[SampleRecord],
    encoder: StyleEncoder,
    config: dict,
) -> tuple[Denoiser, NoiseSchedule, dict]:
    """Train a denoiser on a manifest; returns (model, schedule, history)."""
    from .diffusion import build_schedule  # local to keep module import cheap

    seed = int(config["seed"])
    size = int(config["data.image_size"])
    steps = int(config["optimizer.steps"])
    batch_size = int(config["optimizer.batch_size"])
    t_max = int(config["schedule.timesteps"])

    schedule = build_schedule(
        t_max,
        float(config["schedule.beta_start"]),
        float(config["schedule.beta_end"]),
        str(config["schedule.kind"]),
    )
    model_config = DenoiserConfig(
        image_size=size,
        base_channels=int(config["denoiser.base_channels"]),
        channel_multipliers=tuple(config["denoiser.channel_multipliers"]),
        res_blocks=int(config["denoiser.res_blocks"]),
        time_embed_dim=int(config["denoiser.time_embed_dim"]),
        stfm_max_resolution=int(config["denoiser.stfm_max_resolution"]),
        norm_groups=int(config["denoiser.norm_groups"]),
        fusion_heads=int(config["stfm.heads"]),
        fusion_zero_init=bool(config["stfm.zero_init"]),
        fusion_patches=tuple(config["stfm.patches"]),
        cond_channels=encoder.condition_channels,
    )
    torch.manual_seed(seed)
    model = Denoiser(model_config)
    opt = torch.optim.Adam(model.parameters(), lr=float(config["optimizer.lr"]))

    rng = np.random.default_rng(seed)
    pairs = build_pairs(records, rng)
    guides_by_style: dict[int, list[SampleRecord]] = {}
    for p in pairs:
        guides_by_style.setdefault(p.spoof.style_id, []).append(p.spoof)
    cache = _ImageCache(size)
    noise_gen = torch.Generator().manual_seed(seed)
    p_uncond = float(config["sampler.p_uncond"])

    losses: list[float] = []
    for step in range(steps):
        idx = rng.integers(len(pairs), size=batch_size)
        batch: list[LiveSpoofPair] = [pairs[i] for i in idx]
        lives = torch.stack([cache.get(p.live) for p in batch])
        spoofs = torch.stack([cache.get(p.spoof) for p in batch])
        guides = torch.stack(
            [
                cache.get(
                    guides_by_style[p.spoof.style_id][
                        int(rng.integers(len(guides_by_style[p.spoof.style_id])))
                    ]
                )
                for p in batch
            ]
        )

        cond = encode_style(encoder, guides)
        cond = condition_dropout(cond, p_uncond, noise_gen)

        ts = rng.integers(1, t_max + 1, size=batch_size)
        eps = torch.randn(spoofs.shape, generator=noise_gen)
        noisy = torch.stack(
            [
                forward_diffuse(spoofs[i], int(ts[i]), eps[i], schedule)
                for i in range(batch_size)
            ]
        )
        pred = model(noisy, lives, torch.from_numpy(ts).long(), cond)
        loss = torch.mean((pred - eps) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if (step + 1) % max(1, steps // 20) == 0 or step == 0:
            recent = float(np.mean(losses[-50:]))
            logger.info("diffusion step %d/%d loss %.4f", step + 1, steps, recent)

    model.eval()
    history = {"loss_curve": losses, "seed": seed, "pairs": len(pairs)}
    return model, schedule, history
