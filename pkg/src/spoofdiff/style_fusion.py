"""Patch-statistics style fusion.

Texture of a guide image is summarized as per-patch channel means and
variances (plus one global token), fused with the equivalent statistics of
a backbone feature map through cross-attention (queries from the backbone,
keys/values from the condition), and injected back as a residual
modulation:

    out = X + conv(instance_norm(X) * sigma_f + mu_f)

The mean branch uses larger patches than the variance branch: patch-wise
means carry identity-like layout, patch-wise variances carry texture, so a
coarser mean grid suppresses identity leakage from the guide.  The output
convolution is zero-initialized, which makes the whole module the identity
at initialization and keeps the conditional and unconditional network
paths exactly equal until training moves the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

MEAN = "mean"
VARIANCE = "variance"
_KINDS = (MEAN, VARIANCE)


@dataclass
class PatchStatsSequence:
    """Flattened per-patch statistics: (num_patches + 1, channels) tokens.

    Rows follow the patch grid in row-major order; the final row is the
    whole-map statistic.
    """

    tokens: torch.Tensor
    grid: tuple[int, int]
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        rows, cols = self.grid
        if self.tokens.shape[0] != rows * cols + 1:
            raise ValueError(
                f"token count {self.tokens.shape[0]} != {rows}x{cols} patches + 1 global"
            )

    @property
    def channels(self) -> int:
        return int(self.tokens.shape[1])


def patch_stat_tokens(x: torch.Tensor, patch: int, kind: str) -> torch.Tensor:
    """Batched kernel: (B, C, H, W) -> (B, rows*cols + 1, C) stat tokens."""
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    b, c, h, w = x.shape
    if patch < 1 or h % patch or w % patch:
        raise ValueError(f"patch size {patch} does not divide map size {h}x{w}")
    rows, cols = h // patch, w // patch
    tiles = x.reshape(b, c, rows, patch, cols, patch)
    mean = tiles.mean(dim=(3, 5))
    if kind == MEAN:
        grid_stat = mean
        global_stat = x.mean(dim=(2, 3))
    else:
        # population variance: E[x^2] - E[x]^2, clamped against rounding
        grid_stat = (tiles**2).mean(dim=(3, 5)) - mean**2
        grid_stat = grid_stat.clamp_min(0.0)
        global_stat = ((x**2).mean(dim=(2, 3)) - x.mean(dim=(2, 3)) ** 2).clamp_min(0.0)
    tokens = grid_stat.permute(0, 2, 3, 1).reshape(b, rows * cols, c)
    return torch.cat([tokens, global_stat.unsqueeze(1)], dim=1)


def patch_statistics(feature_map: torch.Tensor, patch: int, kind: str) -> PatchStatsSequence:
    """Per-patch channel means or population variances of a (C, H, W) map."""
    if feature_map.dim() != 3:
        raise ValueError(f"expected (C, H, W) map, got shape {tuple(feature_map.shape)}")
    tokens = patch_stat_tokens(feature_map.unsqueeze(0), patch, kind).squeeze(0)
    rows = feature_map.shape[1] // patch
    cols = feature_map.shape[2] // patch
    return PatchStatsSequence(tokens=tokens, grid=(rows, cols), kind=kind)


class StatAttention(nn.Module):
    """Cross-attention over statistic tokens with learned Q/K/V projections."""

    def __init__(self, channels: int, heads: int = 1):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels, bias=False)

    def forward(
        self,
        query_tokens: torch.Tensor,
        kv_tokens: torch.Tensor,
        uniform_attention: bool = False,
    ) -> torch.Tensor:
        """(B, L, C) queries x (B, M, C) keys/values -> (B, L, C).

        ``uniform_attention`` is a test hook that replaces the softmax
        weights with 1/M, so each output token is the mean of the value
        projections.
        """
        b, length, _ = query_tokens.shape
        m = kv_tokens.shape[1]
        d = self.channels // self.heads
        q = self.q(query_tokens).reshape(b, length, self.heads, d).transpose(1, 2)
        k = self.k(kv_tokens).reshape(b, m, self.heads, d).transpose(1, 2)
        v = self.v(kv_tokens).reshape(b, m, self.heads, d).transpose(1, 2)
        if uniform_attention:
            out = v.mean(dim=2, keepdim=True).expand(b, self.heads, length, d)
        else:
            scores = torch.matmul(q, k.transpose(-1, -2)) / d**0.5
            out = torch.matmul(torch.softmax(scores, dim=-1), v)
        return out.transpose(1, 2).reshape(b, length, self.channels)


def fuse_statistics(
    backbone_stats: PatchStatsSequence,
    cond_stats: PatchStatsSequence,
    weights: StatAttention,
    uniform_attention: bool = False,
) -> PatchStatsSequence:
    """Cross-attend backbone stat tokens onto condition stat tokens."""
    if backbone_stats.kind != cond_stats.kind:
        raise ValueError(
            f"kind mismatch: {backbone_stats.kind!r} vs {cond_stats.kind!r}"
        )
    if backbone_stats.channels != cond_stats.channels:
        raise ValueError(
            f"channel mismatch: {backbone_stats.channels} vs {cond_stats.channels}"
        )
    if backbone_stats.channels != weights.channels:
        raise ValueError(
            f"attention weights expect {weights.channels} channels, "
            f"tokens have {backbone_stats.channels}"
        )
    fused = weights(
        backbone_stats.tokens.unsqueeze(0),
        cond_stats.tokens.unsqueeze(0),
        uniform_attention=uniform_attention,
    ).squeeze(0)
    return PatchStatsSequence(tokens=fused, grid=backbone_stats.grid, kind=backbone_stats.kind)


def tokens_to_map(tokens: torch.Tensor, grid: tuple[int, int], size: tuple[int, int]) -> torch.Tensor:
    """(B, rows*cols + 1, C) tokens -> (B, C, H, W) map.

    Drops the trailing global token, reshapes to the patch grid and
    bilinearly upsamples (half-pixel centers) to the target size.
    """
    rows, cols = grid
    b, n, c = tokens.shape
    if n != rows * cols + 1:
        raise ValueError(f"token count {n} inconsistent with grid {rows}x{cols}")
    coarse = tokens[:, :-1, :].reshape(b, rows, cols, c).permute(0, 3, 1, 2)
    if (rows, cols) == tuple(size):
        return coarse
    return F.interpolate(coarse, size=size, mode="bilinear", align_corners=False)


def spatial_standardize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Per-channel spatial standardization without learned affine terms."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def inject(
    backbone_map: torch.Tensor,
    fused_mean: PatchStatsSequence,
    fused_var: PatchStatsSequence,
    projection,
) -> torch.Tensor:
    """Residual style modulation of a (C, H, W) backbone feature map.

    ``projection`` is any callable on (C, H, W); production uses a 3x3
    convolution, tests may pass an identity hook.
    """
    if backbone_map.dim() != 3:
        raise ValueError(f"expected (C, H, W) map, got {tuple(backbone_map.shape)}")
    size = (backbone_map.shape[1], backbone_map.shape[2])
    mu = tokens_to_map(fused_mean.tokens.unsqueeze(0), fused_mean.grid, size).squeeze(0)
    sigma = tokens_to_map(fused_var.tokens.unsqueeze(0), fused_var.grid, size).squeeze(0)
    if mu.shape != backbone_map.shape or sigma.shape != backbone_map.shape:
        raise ValueError("fused statistics inconsistent with backbone map size")
    modulated = spatial_standardize(backbone_map) * sigma + mu
    return backbone_map + projection(modulated)


@dataclass(frozen=True)
class StyleFusionSpec:
    """Patch sizes and attention layout for one injection resolution."""

    mean_patch: int
    var_patch: int
    heads: int = 1
    zero_init_output: bool = True

    def __post_init__(self) -> None:
        if not self.mean_patch >= self.var_patch >= 1:
            raise ValueError(
                f"need mean_patch >= var_patch >= 1, got {self.mean_patch}/{self.var_patch}"
            )


class StyleFusionBlock(nn.Module):
    """Batched fusion block used inside the denoiser.

    A 1x1 adapter first maps the condition map to the backbone channel
    width so the token fusion runs with equal channel counts regardless of
    the style encoder's stage widths.
    """

    def __init__(self, channels: int, cond_channels: int, spec: StyleFusionSpec):
        super().__init__()
        self.spec = spec
        self.adapter = nn.Conv2d(cond_channels, channels, kernel_size=1)
        self.attn_mean = StatAttention(channels, spec.heads)
        self.attn_var = StatAttention(channels, spec.heads)
        self.proj = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        if spec.zero_init_output:
            nn.init.zeros_(self.proj.weight)
            nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor, cond_map: torch.Tensor | None) -> torch.Tensor:
        if cond_map is None:
            return x
        if cond_map.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"condition map {tuple(cond_map.shape[-2:])} does not match "
                f"feature map {tuple(x.shape[-2:])}"
            )
        cond = self.adapter(cond_map)
        h, w = x.shape[-2], x.shape[-1]
        mp, vp = self.spec.mean_patch, self.spec.var_patch
        fused_mu = self.attn_mean(
            patch_stat_tokens(x, mp, MEAN), patch_stat_tokens(cond, mp, MEAN)
        )
        fused_sigma = self.attn_var(
            patch_stat_tokens(x, vp, VARIANCE), patch_stat_tokens(cond, vp, VARIANCE)
        )
        mu = tokens_to_map(fused_mu, (h // mp, w // mp), (h, w))
        sigma = tokens_to_map(fused_sigma, (h // vp, w // vp), (h, w))
        return x + self.proj(spatial_standardize(x) * sigma + mu)
