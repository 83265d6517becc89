"""Encoder-decoder noise-prediction network.

A UNet over 6 input channels (noisy spoof image concatenated with the
clean live image of the same identity) predicting the 3-channel noise.
Style fusion blocks sit at every level whose spatial size is at or below
``stfm_max_resolution``; when no condition stack is supplied they are
skipped entirely, so the unconditional path never touches fusion weights.

Nothing downstream depends on the exact block layout; it is configurable
and checkpoints carry the full config.
"""

from __future__ import annotations

import math
import pickle
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError
from .style_encoder import ConditionStack
from .style_fusion import StyleFusionBlock, StyleFusionSpec

CHECKPOINT_SCHEMA_VERSION = 1

# (resolution, mean patch, variance patch); larger mean patches suppress
# identity layout, small variance patches keep texture detail
DEFAULT_FUSION_PATCHES: tuple[tuple[int, int, int], ...] = ((32, 8, 2), (16, 4, 2), (8, 4, 1))


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 64
    base_channels: int = 64
    channel_multipliers: tuple[int, ...] = (1, 2, 2)
    res_blocks: int = 2
    time_embed_dim: int = 0  # 0 -> 4 * base_channels
    stfm_max_resolution: int = 32
    input_channels: int = 6
    output_channels: int = 3
    norm_groups: int = 8
    fusion_heads: int = 1
    fusion_zero_init: bool = True
    fusion_patches: tuple[tuple[int, int, int], ...] = DEFAULT_FUSION_PATCHES
    # (resolution, channels) of the condition maps; None disables fusion
    cond_channels: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.stfm_max_resolution & (self.stfm_max_resolution - 1):
            raise ValueError("stfm_max_resolution must be a power of two")
        levels = len(self.channel_multipliers)
        if self.image_size % (1 << (levels - 1)):
            raise ValueError(
                f"image size {self.image_size} not divisible across {levels} levels"
            )

    @property
    def embed_dim(self) -> int:
        return self.time_embed_dim or 4 * self.base_channels

    @property
    def level_resolutions(self) -> tuple[int, ...]:
        return tuple(self.image_size >> i for i in range(len(self.channel_multipliers)))

    def fusion_resolutions(self) -> tuple[int, ...]:
        if self.cond_channels is None:
            return ()
        available = {res for res, _ in self.cond_channels}
        return tuple(
            r
            for r in self.level_resolutions
            if r <= self.stfm_max_resolution and r in available
        )


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(t.device)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, embed_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.embed = nn.Linear(embed_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.embed(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ed = config.embed_dim
        g = config.norm_groups
        chans = [config.base_channels * m for m in config.channel_multipliers]
        res = config.level_resolutions
        cond_by_res = dict(config.cond_channels) if config.cond_channels else {}
        fuse_res = set(config.fusion_resolutions())
        patch_by_res = {r: (mp, vp) for r, mp, vp in config.fusion_patches}

        def fusion(ch: int, r: int) -> StyleFusionBlock | None:
            if r not in fuse_res:
                return None
            if r not in patch_by_res:
                raise ValueError(f"no fusion patch sizes configured for resolution {r}")
            mp, vp = patch_by_res[r]
            spec = StyleFusionSpec(
                mean_patch=mp,
                var_patch=vp,
                heads=config.fusion_heads,
                zero_init_output=config.fusion_zero_init,
            )
            return StyleFusionBlock(ch, cond_by_res[r], spec)

        self.time_mlp = nn.Sequential(nn.Linear(config.base_channels, ed), nn.SiLU(), nn.Linear(ed, ed))
        self.in_conv = nn.Conv2d(config.input_channels, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_fusion = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = chans[0]
        for i, ch in enumerate(chans):
            blocks = nn.ModuleList()
            for j in range(config.res_blocks):
                blocks.append(ResBlock(prev if j == 0 else ch, ch, ed, g))
            self.down_blocks.append(blocks)
            self.down_fusion.append(fusion(ch, res[i]) or nn.Identity())
            self.downsample.append(
                nn.Conv2d(ch, ch, 3, stride=2, padding=1) if i < len(chans) - 1 else nn.Identity()
            )
            prev = ch

        self.mid_block1 = ResBlock(prev, prev, ed, g)
        self.mid_fusion = fusion(prev, res[-1]) or nn.Identity()
        self.mid_block2 = ResBlock(prev, prev, ed, g)

        self.up_blocks = nn.ModuleList()
        self.up_fusion = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(chans))):
            ch = chans[i]
            blocks = nn.ModuleList()
            for j in range(config.res_blocks):
                blocks.append(ResBlock(prev + ch if j == 0 else ch, ch, ed, g))
            self.up_blocks.append(blocks)
            self.up_fusion.append(fusion(ch, res[i]) or nn.Identity())
            self.upsample.append(
                nn.Conv2d(ch, ch, 3, padding=1) if i > 0 else nn.Identity()
            )
            prev = ch

        self.out_norm = nn.GroupNorm(g, chans[0])
        self.out_conv = nn.Conv2d(chans[0], config.output_channels, 3, padding=1)

    @staticmethod
    def _fuse(block: nn.Module, h: torch.Tensor, cond: dict[int, torch.Tensor] | None) -> torch.Tensor:
        if isinstance(block, StyleFusionBlock):
            return block(h, cond.get(int(h.shape[-1])) if cond else None)
        return h

    def _cond_maps(self, cond: ConditionStack | None, batch: int) -> dict[int, torch.Tensor] | None:
        if cond is None:
            return None
        expected = self.config.fusion_resolutions()
        got = cond.resolutions
        if tuple(sorted(got, reverse=True)) != tuple(sorted(expected, reverse=True)):
            raise ValueError(
                f"condition resolutions {got} inconsistent with fusion levels {expected}"
            )
        maps = {}
        for m in cond.maps:
            if m.dim() == 3:
                m = m.unsqueeze(0).expand(batch, -1, -1, -1)
            elif m.shape[0] != batch:
                raise ValueError(
                    f"condition batch {m.shape[0]} != input batch {batch}"
                )
            maps[int(m.shape[-1])] = m
        return maps

    def forward(
        self,
        x_t: torch.Tensor,
        live: torch.Tensor,
        t: int | torch.Tensor,
        cond: ConditionStack | None = None,
    ) -> torch.Tensor:
        """Predict the injected noise for x_t given the clean live image.

        Accepts (3, H, W) or (B, 3, H, W) inputs; ``t`` may be a python int
        (shared across the batch) or a (B,) tensor.
        """
        squeeze = x_t.dim() == 3
        if squeeze:
            x_t, live = x_t.unsqueeze(0), live.unsqueeze(0)
        if x_t.shape[-2:] != live.shape[-2:]:
            raise ValueError(
                f"noisy input {tuple(x_t.shape[-2:])} and live image "
                f"{tuple(live.shape[-2:])} sizes differ"
            )
        b = x_t.shape[0]
        if isinstance(t, int):
            t = torch.full((b,), t, dtype=torch.long, device=x_t.device)
        cond_maps = self._cond_maps(cond, b)

        emb = self.time_mlp(
            timestep_embedding(t, self.config.base_channels).to(x_t.dtype)
        )
        h = self.in_conv(torch.cat([x_t, live], dim=1))

        skips = []
        for blocks, fuse, down in zip(self.down_blocks, self.down_fusion, self.downsample):
            for block in blocks:
                h = block(h, emb)
            h = self._fuse(fuse, h, cond_maps)
            skips.append(h)
            h = down(h)

        h = self.mid_block1(h, emb)
        h = self._fuse(self.mid_fusion, h, cond_maps)
        h = self.mid_block2(h, emb)

        for blocks, fuse, up in zip(self.up_blocks, self.up_fusion, self.upsample):
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, emb)
            h = self._fuse(fuse, h, cond_maps)
            if not isinstance(up, nn.Identity):
                h = up(F.interpolate(h, scale_factor=2, mode="nearest"))

        out = self.out_conv(F.silu(self.out_norm(h)))
        return out.squeeze(0) if squeeze else out


def predict_noise(
    model: Denoiser,
    x_t: torch.Tensor,
    live: torch.Tensor,
    t: int | torch.Tensor,
    cond: ConditionStack | None = None,
) -> torch.Tensor:
    return model(x_t, live, t, cond)


def save_denoiser(
    path: str | Path,
    model: Denoiser,
    *,
    seed: int,
    schedule_params: dict,
    **extra,
) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": "denoiser",
        "config": asdict(model.config),
        "seed": seed,
        "schedule": dict(schedule_params),
        "state_dict": model.state_dict(),
    }
    payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


def load_denoiser(path: str | Path) -> tuple[Denoiser, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as exc:
        raise DataError(f"unreadable denoiser checkpoint {path}: {exc}") from exc
    if payload.get("kind") != "denoiser":
        raise DataError(f"{path} is not a denoiser checkpoint")
    raw = {k: _as_tuple(v) for k, v in payload["config"].items()}
    model = Denoiser(DenoiserConfig(**raw))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
