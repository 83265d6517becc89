"""Spoofing-style encoder: a residual classifier whose stage outputs condition the denoiser.

The encoder is trained once with cross-entropy on spoofing-style labels and
frozen afterwards; `encode_style` then exposes the intermediate stage
feature maps (one per configured condition resolution, decreasing) as the
multi-scale condition stack for style fusion.
"""

from __future__ import annotations

import logging
import pickle
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import SampleRecord
from .errors import DataError
from .images import load_image_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConditionStack:
    """Multi-scale condition maps, ordered by strictly decreasing resolution."""

    maps: tuple[torch.Tensor, ...]

    def __post_init__(self) -> None:
        sizes = [m.shape[-1] for m in self.maps]
        if any(later >= earlier for earlier, later in zip(sizes[:-1], sizes[1:])):
            raise ValueError(f"condition resolutions must strictly decrease, got {sizes}")

    @property
    def resolutions(self) -> tuple[int, ...]:
        return tuple(int(m.shape[-1]) for m in self.maps)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(m.shape[-3]) for m in self.maps)

    def by_resolution(self) -> dict[int, torch.Tensor]:
        return {int(m.shape[-1]): m for m in self.maps}


@dataclass(frozen=True)
class StyleEncoderConfig:
    num_styles: int
    image_size: int = 64
    stem_channels: int = 16
    stage_channels: tuple[int, ...] = (32, 64, 96)
    blocks_per_stage: int = 1
    condition_resolutions: tuple[int, ...] = (32, 16)
    norm_groups: int = 8

    def __post_init__(self) -> None:
        if self.num_styles < 2:
            raise ValueError(f"need at least 2 style classes, got {self.num_styles}")
        stage_sizes = [self.image_size // 2 ** (i + 1) for i in range(len(self.stage_channels))]
        missing = [r for r in self.condition_resolutions if r not in stage_sizes]
        if missing:
            raise ValueError(
                f"condition resolutions {missing} have no encoder stage "
                f"(stages produce {stage_sizes})"
            )


class _ResidualUnit(nn.Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class StyleEncoder(nn.Module):
    """Residual convolutional style classifier with taps at 1/2, 1/4, ... resolution."""

    def __init__(self, config: StyleEncoderConfig):
        super().__init__()
        self.config = config
        g = config.norm_groups
        self.stem = nn.Sequential(
            nn.Conv2d(3, config.stem_channels, 3, padding=1),
            nn.GroupNorm(g, config.stem_channels),
            nn.SiLU(),
        )
        stages = []
        prev = config.stem_channels
        for ch in config.stage_channels:
            layers: list[nn.Module] = [nn.Conv2d(prev, ch, 3, stride=2, padding=1)]
            layers += [_ResidualUnit(ch, g) for _ in range(config.blocks_per_stage)]
            stages.append(nn.Sequential(*layers))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(prev, config.num_styles)

    def _run(self, x: torch.Tensor) -> tuple[torch.Tensor, dict[int, torch.Tensor]]:
        h = self.stem(x)
        taps: dict[int, torch.Tensor] = {}
        for stage in self.stages:
            h = stage(h)
            taps[int(h.shape[-1])] = h
        return h, taps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self._run(x)
        return self.head(h.mean(dim=(2, 3)))

    def condition_maps(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        _, taps = self._run(x)
        return taps

    @property
    def condition_channels(self) -> tuple[tuple[int, int], ...]:
        """(resolution, channels) per configured condition resolution."""
        stage_sizes = [
            self.config.image_size // 2 ** (i + 1)
            for i in range(len(self.config.stage_channels))
        ]
        by_size = dict(zip(stage_sizes, self.config.stage_channels))
        return tuple((r, by_size[r]) for r in self.config.condition_resolutions)


def encode_style(encoder: StyleEncoder, guide: torch.Tensor) -> ConditionStack:
    """Frozen forward pass producing the condition stack for one guide image.

    Accepts (3, H, W) or a batch (B, 3, H, W); maps keep the batch layout of
    the input.
    """
    squeeze = guide.dim() == 3
    cfg = encoder.config
    x = guide.unsqueeze(0) if squeeze else guide
    if x.shape[-1] != cfg.image_size or x.shape[-2] != cfg.image_size:
        raise ValueError(
            f"guide size {tuple(x.shape[-2:])} != encoder training size "
            f"{cfg.image_size}x{cfg.image_size}"
        )
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            taps = encoder.condition_maps(x)
    finally:
        encoder.train(was_training)
    maps = []
    for res in cfg.condition_resolutions:
        m = taps[res]
        maps.append(m.squeeze(0) if squeeze else m)
    return ConditionStack(maps=tuple(maps))


def _load_batch(records: list[SampleRecord], size: int) -> torch.Tensor:
    return torch.stack([load_image_tensor(r.path, size) for r in records])


def train_style_encoder(
    records: list[SampleRecord],
    config: StyleEncoderConfig,
    *,
    epochs: int = 8,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[StyleEncoder, dict]:
    """Train the style classifier to convergence with cross-entropy.

    Every record's style_id is a class label (live records carry their own
    live-style ids).  Returns the trained encoder and a history dict with
    the per-epoch loss curve and final training accuracy.
    """
    labels = np.array([r.style_id for r in records], dtype=np.int64)
    distinct = np.unique(labels)
    if distinct.size < 2:
        raise DataError(f"style encoder needs >= 2 distinct styles, got {distinct.size}")
    if distinct.min() < 0 or distinct.max() >= config.num_styles:
        raise DataError(
            f"style ids span [{distinct.min()}, {distinct.max()}] but config "
            f"declares {config.num_styles} styles"
        )

    torch.manual_seed(seed)
    model = StyleEncoder(config)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    images = _load_batch(records, config.image_size)
    target = torch.from_numpy(labels)

    losses: list[float] = []
    n = len(records)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start : start + batch_size].copy())
            logits = model(images[idx])
            loss = F.cross_entropy(logits, target[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * idx.numel()
        losses.append(epoch_loss / n)
        logger.info("style encoder epoch %d/%d loss %.4f", epoch + 1, epochs, losses[-1])

    model.eval()
    with torch.no_grad():
        preds = []
        for start in range(0, n, batch_size):
            preds.append(model(images[start : start + batch_size]).argmax(dim=1))
        accuracy = float((torch.cat(preds) == target).float().mean())
    logger.info("style encoder training accuracy %.4f", accuracy)
    history = {"loss_curve": losses, "train_accuracy": accuracy, "seed": seed}
    return model, history


def save_style_encoder(
    path: str | Path, encoder: StyleEncoder, history: dict | None = None, **extra
) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": "style_encoder",
        "config": asdict(encoder.config),
        "num_styles": encoder.config.num_styles,
        "stage_channels": tuple(encoder.config.stage_channels),
        "state_dict": encoder.state_dict(),
        "history": history or {},
    }
    payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def encoder_from_payload(payload: dict) -> StyleEncoder:
    """Rebuild a frozen encoder from a checkpoint payload dict."""
    if payload.get("kind") != "style_encoder":
        raise DataError("payload is not a style encoder checkpoint")
    raw = dict(payload["config"])
    raw["stage_channels"] = tuple(raw["stage_channels"])
    raw["condition_resolutions"] = tuple(raw["condition_resolutions"])
    encoder = StyleEncoder(StyleEncoderConfig(**raw))
    encoder.load_state_dict(payload["state_dict"])
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder


def load_style_encoder(path: str | Path) -> tuple[StyleEncoder, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as exc:
        raise DataError(f"unreadable style encoder checkpoint {path}: {exc}") from exc
    if payload.get("kind") != "style_encoder":
        raise DataError(f"{path} is not a style encoder checkpoint")
    return encoder_from_payload(payload), payload
