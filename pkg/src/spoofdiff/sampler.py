"""Guided edit sampling: noise a live image, denoise it into a spoof.

Classifier-free guidance combines the conditional and unconditional noise
estimates as  u + gamma * (c - u);  gamma = 1 and gamma = 0 short-circuit
to the single matching network call so those identities hold bit-for-bit.
Sampling never starts from pure noise: the live image is pushed t_start
steps into the forward process and then denoised conditionally, which
preserves its coarse content while the guide's texture is painted in.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .diffusion import NoiseSchedule, forward_diffuse, reverse_step_with_noise

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    gamma: float = 2.0
    t_start: int = 100
    p_uncond: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond must be in [0, 1), got {self.p_uncond}")
        if self.t_start < 1:
            raise ValueError(f"t_start must be >= 1, got {self.t_start}")


def condition_dropout(cond, p_uncond: float, generator: torch.Generator):
    """Return None with probability p_uncond, else the condition unchanged."""
    if not 0.0 <= p_uncond < 1.0:
        raise ValueError(f"p_uncond must be in [0, 1), got {p_uncond}")
    if p_uncond == 0.0:
        return cond
    u = torch.rand((), generator=generator)
    return None if float(u) < p_uncond else cond


def cfg_predict(denoiser, x_t, live, t, cond, gamma: float):
    """u + gamma * (c - u) over the conditional/unconditional estimates."""
    if cond is None:
        raise ValueError("cfg_predict requires a condition; use the plain call for unconditional")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 1.0:
        return denoiser(x_t, live, t, cond)
    if gamma == 0.0:
        return denoiser(x_t, live, t, None)
    c = denoiser(x_t, live, t, cond)
    u = denoiser(x_t, live, t, None)
    return u + gamma * (c - u)


def _derived_generator(seed: int, index: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed((seed * 1000003 + index) % (1 << 62))
    return g


def _stacked_randn(shape, generators: list[torch.Generator], dtype) -> torch.Tensor:
    return torch.stack(
        [torch.randn(shape, generator=g, dtype=dtype) for g in generators]
    )


def edit_sample_batch(
    lives: torch.Tensor,
    cond,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    denoiser,
    sample_indices: list[int] | None = None,
) -> torch.Tensor:
    """Batched edit sampling with per-sample noise streams.

    ``lives`` is (B, 3, H, W); ``cond`` is an already-encoded condition
    stack (batched or shared).  Each sample's noise comes from a generator
    derived from (config.seed, sample index), so batching and one-at-a-time
    generation produce identical images.
    """
    if config.t_start > schedule.timesteps:
        raise ValueError(
            f"t_start {config.t_start} exceeds schedule length {schedule.timesteps}"
        )
    b = lives.shape[0]
    indices = sample_indices if sample_indices is not None else list(range(b))
    if len(indices) != b:
        raise ValueError(f"got {len(indices)} sample indices for batch of {b}")
    gens = [_derived_generator(config.seed, i) for i in indices]
    shape = lives.shape[1:]

    eps = _stacked_randn(shape, gens, lives.dtype)
    x = forward_diffuse(lives, config.t_start, eps, schedule)
    for t in range(config.t_start, 0, -1):
        eps_hat = cfg_predict(denoiser, x, lives, t, cond, config.gamma)
        noise = _stacked_randn(shape, gens, lives.dtype) if t > 1 else None
        x = reverse_step_with_noise(eps_hat, x, t, schedule, noise)
    return x.clamp(-1.0, 1.0)


def edit_sample(
    live: torch.Tensor,
    guide: torch.Tensor,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    denoiser,
    encoder,
) -> torch.Tensor:
    """Generate the spoof version of one live image, guided by one spoof image.

    ``denoiser`` is called as denoiser(x_t, live, t, cond); ``encoder`` as
    encoder(guide) -> condition stack.  Returns a float image in [-1, 1];
    writing 8-bit RGB files is the caller's concern.
    """
    cond = encoder(guide)
    out = edit_sample_batch(
        live.unsqueeze(0), cond, config, schedule, denoiser, sample_indices=[0]
    )
    return out.squeeze(0)


def append_generation_log(
    log_path: str | Path,
    *,
    live_path: str,
    guide_path: str,
    style_id: int,
    gamma: float,
    t_start: int,
    seed: int,
    output_path: str,
) -> None:
    """Append one JSON-lines entry describing a generated image."""
    entry = {
        "live": live_path,
        "guide": guide_path,
        "style_id": style_id,
        "gamma": gamma,
        "t_start": t_start,
        "seed": seed,
        "output": output_path,
    }
    path = Path(log_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(entry) + "\n")
