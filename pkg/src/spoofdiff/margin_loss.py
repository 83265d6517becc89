"""Quality-adaptive margin softmax loss.

The target-class cosine logit is replaced by

    g(theta) = cos(theta - s * b_rq) - s * (1 + b_rq)

where b_rq is the sample's batch-relative quality score and s a per-class
(live/spoof) scale.  At b_rq = 0 this is the plain additive-margin
(CosFace-style) form cos(theta) - s; positive b_rq (high quality) tightens
the margin, negative b_rq relaxes it.  The numerator exponent is scaled by
m while non-target terms keep plain cos(theta_j); ``scale_all_logits``
switches to the common variant where m multiplies every logit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class MarginParams:
    s_live: float = 0.4
    s_spoof: float = 0.2
    m: float = 30.0
    scale_all_logits: bool = False

    def __post_init__(self) -> None:
        if self.s_live < 0 or self.s_spoof < 0:
            raise ValueError("scale coefficients must be >= 0")
        if self.m <= 0:
            raise ValueError(f"logit scale m must be positive, got {self.m}")


def quality_margins(b_rq: float, s: float) -> tuple[float, float]:
    """Angular and additive margins for one sample: (-s*b_rq, s*(1 + b_rq))."""
    return -s * b_rq, s * (1.0 + b_rq)


def margin_adjusted_cosine(theta: float, s: float, b_rq: float) -> float:
    """g(theta) = cos(theta - s*b_rq) - s*(1 + b_rq)."""
    return math.cos(theta - s * b_rq) - s * (1.0 + b_rq)


def equivalent_additive_margin(b_rq: float, theta: float, s: float) -> float:
    """cos(theta) - g(theta): the margin expressed as a plain additive penalty."""
    return math.cos(theta) - margin_adjusted_cosine(theta, s, b_rq)


def relative_quality_loss(
    cos_theta: torch.Tensor,
    labels: torch.Tensor,
    b_rq: torch.Tensor,
    is_live: torch.Tensor,
    params: MarginParams,
) -> torch.Tensor:
    """Batch-mean margin softmax cross-entropy over cosine logits.

    cos_theta: (B, C) cosine similarities in [-1, 1]; labels: (B,) target
    classes; b_rq: (B,) relative quality scores; is_live: (B,) bool flags
    selecting s_live vs s_spoof per sample.
    """
    if cos_theta.dim() != 2:
        raise ValueError(f"cos_theta must be (batch, classes), got {tuple(cos_theta.shape)}")
    b, c = cos_theta.shape
    if labels.shape != (b,) or b_rq.shape != (b,) or is_live.shape != (b,):
        raise ValueError("labels, b_rq and is_live must all be (batch,)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels out of range for {c} classes")

    s = torch.where(
        is_live,
        torch.as_tensor(params.s_live, dtype=cos_theta.dtype),
        torch.as_tensor(params.s_spoof, dtype=cos_theta.dtype),
    )
    rq = b_rq.to(cos_theta.dtype)
    theta = torch.arccos(cos_theta.gather(1, labels[:, None]).squeeze(1).clamp(-1.0, 1.0))
    g = torch.cos(theta - s * rq) - s * (1.0 + rq)

    base = params.m * cos_theta if params.scale_all_logits else cos_theta
    logits = base.scatter(1, labels[:, None], (params.m * g)[:, None])
    return F.cross_entropy(logits, labels)


def scaled_cross_entropy(cos_theta: torch.Tensor, labels: torch.Tensor, m: float) -> torch.Tensor:
    """Plain softmax cross-entropy over m-scaled cosine logits (the CE baseline)."""
    return F.cross_entropy(m * cos_theta, labels)
