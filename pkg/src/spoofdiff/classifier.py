"""Live/spoof classifier trained on style classes with the quality margin loss.

Classes are spoofing styles plus one live class per domain (the manifest's
dense style ids already encode this), so the binary decision at inference
aggregates class probabilities: the liveness score of a sample is the
summed softmax probability of the live classes over m-scaled cosine
logits.  The backbone is a deliberately generic residual CNN with a cosine
classification head; nothing downstream depends on its exact layout.
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
from .margin_loss import MarginParams, relative_quality_loss, scaled_cross_entropy
from .quality import relative_quality

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    image_size: int = 64
    stem_channels: int = 16
    stage_channels: tuple[int, ...] = (32, 64, 96)
    feature_dim: int = 128
    norm_groups: int = 8
    loss: str = "rq"  # "rq" | "ce"
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "auto"  # "auto" | "adam" | "sgd"
    lr: float = 0.0  # 0 -> optimizer default (adam 1e-4, sgd 2e-3)
    large_data_threshold: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"need >= 2 classes, got {self.num_classes}")
        if self.loss not in ("rq", "ce"):
            raise ValueError(f"loss must be 'rq' or 'ce', got {self.loss!r}")


class CosineClassifier(nn.Module):
    """Residual CNN backbone with unit-normalized features and class weights."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        g = config.norm_groups
        layers: list[nn.Module] = [
            nn.Conv2d(3, config.stem_channels, 3, padding=1),
            nn.GroupNorm(g, config.stem_channels),
            nn.SiLU(),
        ]
        prev = config.stem_channels
        for ch in config.stage_channels:
            layers += [
                nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                nn.GroupNorm(g, ch),
                nn.SiLU(),
                nn.Conv2d(ch, ch, 3, padding=1),
                nn.GroupNorm(g, ch),
                nn.SiLU(),
            ]
            prev = ch
        self.backbone = nn.Sequential(*layers)
        self.project = nn.Linear(prev, config.feature_dim)
        self.class_weights = nn.Parameter(torch.randn(config.num_classes, config.feature_dim) * 0.01)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Cosine similarities (B, num_classes) in [-1, 1]."""
        feat = self.project(self.backbone(x).mean(dim=(2, 3)))
        feat = F.normalize(feat, dim=1)
        weights = F.normalize(self.class_weights, dim=1)
        return (feat @ weights.t()).clamp(-1.0, 1.0)


def _pick_optimizer(config: ClassifierConfig, n_samples: int, model: nn.Module):
    name = config.optimizer
    if name == "auto":
        name = "adam" if n_samples < config.large_data_threshold else "sgd"
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=config.lr or 1e-4)
    if name == "sgd":
        return torch.optim.SGD(model.parameters(), lr=config.lr or 2e-3, momentum=0.9)
    raise ValueError(f"unknown optimizer {name!r}")


def train_classifier(
    records: list[SampleRecord],
    quality_scores: dict[str, float],
    params: MarginParams,
    config: ClassifierConfig,
) -> tuple[CosineClassifier, dict]:
    """Train with the quality margin loss (or the plain CE baseline).

    Every record needs a cached absolute quality score; batch-relative
    scores are recomputed per training batch.  Per-epoch loss and relative
    quality statistics land in the returned history.
    """
    if not records:
        raise DataError("empty training manifest")
    missing = [r.path for r in records if r.path not in quality_scores]
    if missing and config.loss == "rq":
        raise DataError(
            f"{len(missing)} records lack quality scores (first: {missing[0]})"
        )
    labels = np.array([r.style_id for r in records], dtype=np.int64)
    if labels.max() >= config.num_classes:
        raise DataError(
            f"style id {labels.max()} outside configured {config.num_classes} classes"
        )
    for class_id in range(config.num_classes):
        if not (labels == class_id).any():
            raise DataError(f"class {class_id} has no training samples")

    torch.manual_seed(config.seed)
    model = CosineClassifier(config)
    opt = _pick_optimizer(config, len(records), model)
    rng = np.random.default_rng(config.seed)

    images = torch.stack([load_image_tensor(r.path, config.image_size) for r in records])
    target = torch.from_numpy(labels)
    is_live = torch.tensor([r.is_live for r in records])
    b_aq = np.array(
        [quality_scores.get(r.path, 0.0) for r in records], dtype=np.float64
    )

    history: dict = {"loss_curve": [], "rq_stats": [], "seed": config.seed}
    n = len(records)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_rq: list[np.ndarray] = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            tidx = torch.from_numpy(idx.copy())
            cos_theta = model(images[tidx])
            if config.loss == "rq":
                rq = relative_quality(b_aq[idx]).b_rq
                epoch_rq.append(rq)
                loss = relative_quality_loss(
                    cos_theta, target[tidx], torch.from_numpy(rq), is_live[tidx], params
                )
            else:
                loss = scaled_cross_entropy(cos_theta, target[tidx], params.m)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        history["loss_curve"].append(epoch_loss / n)
        if epoch_rq:
            rq_all = np.concatenate(epoch_rq)
            stats = {
                "mean": float(rq_all.mean()),
                "std": float(rq_all.std()),
                "min": float(rq_all.min()),
                "max": float(rq_all.max()),
            }
        else:
            stats = {"mean": 0.0, "std": 0.0, "min": 0.0, "max": 0.0}
        history["rq_stats"].append(stats)
        logger.info(
            "classifier epoch %d/%d loss %.4f rq[mean %.3f std %.3f]",
            epoch + 1,
            config.epochs,
            history["loss_curve"][-1],
            stats["mean"],
            stats["std"],
        )
    model.eval()
    return model, history


def liveness_scores(
    model: CosineClassifier,
    records: list[SampleRecord],
    live_class_ids: tuple[int, ...],
    m: float = 30.0,
    batch_size: int = 64,
) -> np.ndarray:
    """Summed live-class softmax probability per record (higher = more live)."""
    model.eval()
    live_idx = torch.tensor(live_class_ids, dtype=torch.long)
    out: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            images = torch.stack(
                [load_image_tensor(r.path, model.config.image_size) for r in chunk]
            )
            probs = torch.softmax(m * model(images), dim=1)
            out.append(probs[:, live_idx].sum(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0)


def live_class_ids(records: list[SampleRecord]) -> tuple[int, ...]:
    """Style ids used by live records (one live class per domain)."""
    return tuple(sorted({r.style_id for r in records if r.is_live}))


def save_classifier(
    path: str | Path,
    model: CosineClassifier,
    *,
    params: MarginParams,
    history: dict | None = None,
    **extra,
) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": "classifier",
        "config": asdict(model.config),
        "margin_params": asdict(params),
        "state_dict": model.state_dict(),
        "history": history or {},
    }
    payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_classifier(path: str | Path) -> tuple[CosineClassifier, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as exc:
        raise DataError(f"unreadable classifier checkpoint {path}: {exc}") from exc
    if payload.get("kind") != "classifier":
        raise DataError(f"{path} is not a classifier checkpoint")
    raw = dict(payload["config"])
    raw["stage_channels"] = tuple(raw["stage_channels"])
    model = CosineClassifier(ClassifierConfig(**raw))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
