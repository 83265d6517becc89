"""Diffusion-based live-to-spoof generation and quality-adaptive anti-spoofing training."""

from .diffusion import (
    ImagePair,
    NoiseSchedule,
    build_schedule,
    forward_diffuse,
    forward_step,
    reverse_step,
    training_loss,
)
from .margin_loss import (
    MarginParams,
    equivalent_additive_margin,
    margin_adjusted_cosine,
    quality_margins,
    relative_quality_loss,
)
from .metrics import BpcerOnDev, EvalReport, FixedThreshold, evaluate, threshold_for_bpcer
from .quality import QualityBatch, brisque_features, mscn, relative_quality, score_image
from .sampler import SamplerConfig, cfg_predict, condition_dropout, edit_sample
from .style_fusion import (
    PatchStatsSequence,
    StatAttention,
    fuse_statistics,
    inject,
    patch_statistics,
)

__version__ = "0.1.0"

__all__ = [
    "BpcerOnDev",
    "EvalReport",
    "FixedThreshold",
    "ImagePair",
    "MarginParams",
    "NoiseSchedule",
    "PatchStatsSequence",
    "QualityBatch",
    "SamplerConfig",
    "StatAttention",
    "brisque_features",
    "build_schedule",
    "cfg_predict",
    "condition_dropout",
    "edit_sample",
    "equivalent_additive_margin",
    "evaluate",
    "forward_diffuse",
    "forward_step",
    "fuse_statistics",
    "inject",
    "margin_adjusted_cosine",
    "mscn",
    "patch_statistics",
    "quality_margins",
    "relative_quality",
    "relative_quality_loss",
    "reverse_step",
    "score_image",
    "threshold_for_bpcer",
    "training_loss",
    "__version__",
]
