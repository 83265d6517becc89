"""Denoising-diffusion primitives: schedules, forward noising, reverse step.

Forward process:  q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I),
with the closed form  x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps  where
abar_t = prod_{i<=t} (1 - beta_i).  The training objective is the mean
squared error between the drawn eps and the network's eps estimate.  The
reverse step uses the standard posterior mean with fixed variance beta_t.

Timesteps are 1-based: t runs over [1, T].  Schedule tables are float64;
image tensors keep their own dtype.  Every stochastic operation is a pure
function of (inputs, generator), so callers own reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta/alpha/alpha-bar tables (index 0 holds t = 1)."""

    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def timesteps(self) -> int:
        return int(self.betas.shape[0])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside [1, {self.timesteps}]")

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t - 1])


def build_schedule(
    timesteps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a variance schedule; ``linear`` interpolates beta evenly."""
    if timesteps < 1:
        raise ValueError(f"timesteps must be positive, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if timesteps == 1:
        betas = torch.tensor([beta_start], dtype=torch.float64)
    else:
        betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


@dataclass(frozen=True)
class ImagePair:
    """Live/spoof images of one identity and one spoofing style, model space."""

    live: torch.Tensor
    spoof: torch.Tensor


def forward_diffuse(
    x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Closed-form jump to timestep t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def forward_step(
    x_prev: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    """One forward noising step: a draw from N(sqrt(1 - beta_t) x_prev, beta_t I)."""
    beta = schedule.beta(t)
    noise = torch.randn(
        x_prev.shape, generator=generator, dtype=x_prev.dtype, device=x_prev.device
    )
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise


def training_loss(
    denoiser,
    pair: ImagePair,
    cond,
    t: int,
    eps: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """eps-MSE on the noised spoof image, conditioned on the live image.

    The spoof target is noised to timestep t, the clean live image rides
    along as extra input channels, and the denoiser (called as
    ``denoiser(x_t, live, t, cond)``) predicts the injected noise.  ``cond``
    may be None for the unconditional path.
    """
    noisy = forward_diffuse(pair.spoof, t, eps, schedule)
    pred = denoiser(noisy, pair.live, t, cond)
    return torch.mean((pred - eps) ** 2)


def _reverse_step_mean(
    eps_hat: torch.Tensor, x_t: torch.Tensor, t: int, schedule: NoiseSchedule
) -> torch.Tensor:
    alpha = schedule.alpha(t)
    beta = schedule.beta(t)
    abar = schedule.alpha_bar(t)
    # beta = 0 is a noiseless identity step (degenerate schedules in tests)
    coef = beta / math.sqrt(1.0 - abar) if beta > 0.0 else 0.0
    return (x_t - coef * eps_hat) / math.sqrt(alpha)


def reverse_step_with_noise(
    eps_hat: torch.Tensor,
    x_t: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    noise: torch.Tensor | None,
) -> torch.Tensor:
    """Posterior-mean step with caller-supplied noise (ignored at t = 1)."""
    if x_t.shape != eps_hat.shape:
        raise ValueError(
            f"x_t shape {tuple(x_t.shape)} != eps_hat shape {tuple(eps_hat.shape)}"
        )
    mean = _reverse_step_mean(eps_hat, x_t, t, schedule)
    if t <= 1 or noise is None:
        return mean
    return mean + math.sqrt(schedule.beta(t)) * noise


def reverse_step(
    eps_hat: torch.Tensor,
    x_t: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    """One reverse step; stochastic for t > 1, deterministic at t = 1."""
    schedule._check_t(t)
    noise = None
    if t > 1:
        noise = torch.randn(
            x_t.shape, generator=generator, dtype=x_t.dtype, device=x_t.device
        )
    return reverse_step_with_noise(eps_hat, x_t, t, schedule, noise)
