"""Presentation-attack detection metrics.

Scores are liveness scores (higher = more live); labels are 1 for live
(bona fide) and 0 for spoof (attack).  A sample is accepted as live when
its score is >= the threshold.  Under ISO naming, APCER is the fraction of
attacks accepted and BPCER the fraction of bona fide rejected; at a common
threshold APCER = FAR and BPCER = FRR, so HTER and ACER coincide
numerically and are reported separately only for protocol clarity.

AUC uses pairwise comparison with ties counted 1/2, computed via average
ranks (exactly the Mann-Whitney statistic).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedThreshold:
    tau: float


@dataclass(frozen=True)
class BpcerOnDev:
    """Resolve the threshold for a target BPCER on a development split."""

    target: float
    dev_scores: np.ndarray
    dev_labels: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    hter: float
    auc: float
    acer: float
    apcer: float
    bpcer: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return {
            "hter": self.hter,
            "auc": self.auc,
            "acer": self.acer,
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "threshold": self.threshold,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }

    def format_table(self) -> str:
        rows = [
            ("HTER", self.hter),
            ("AUC", self.auc),
            ("ACER", self.acer),
            ("APCER", self.apcer),
            ("BPCER", self.bpcer),
            ("threshold", self.threshold),
        ]
        lines = [f"{name:<10} {value:>10.6f}" for name, value in rows]
        lines.append(
            f"{'counts':<10} TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn}"
        )
        return "\n".join(lines)


def _validate(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    live = labels == 1
    if not live.any() or live.all():
        raise ValueError("need at least one live and one spoof sample")
    return scores, live


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(live score > spoof score) with ties counted 1/2."""
    scores, live = _validate(scores, labels)
    ranks = rankdata(scores, method="average")
    n_live = int(live.sum())
    n_spoof = scores.size - n_live
    u = float(ranks[live].sum()) - n_live * (n_live + 1) / 2.0
    return u / (n_live * n_spoof)


def threshold_for_bpcer(
    dev_scores: np.ndarray, dev_labels: np.ndarray, target: float
) -> float:
    """Largest threshold whose live-rejection rate on the dev set is <= target.

    With acceptance at score >= tau, that threshold is the (k+1)-th
    smallest live score for k = floor(target * n_live); target >= 1 admits
    rejecting everything, so the returned threshold sits above every score.
    """
    if target < 0:
        raise ValueError(f"target BPCER must be >= 0, got {target}")
    dev_scores = np.asarray(dev_scores, dtype=np.float64)
    dev_labels = np.asarray(dev_labels)
    live_scores = np.sort(dev_scores[dev_labels == 1])
    if live_scores.size == 0:
        raise ValueError("dev set contains no live samples")
    n = live_scores.size
    if 0.0 < target and n < 1.0 / target:
        logger.warning(
            "BPCER target %.4g unattainable with %d live dev samples; "
            "using the closest attainable operating point",
            target,
            n,
        )
    k = int(math.floor(target * n + 1e-9))
    if k >= n:
        return float(np.max(dev_scores) + 1.0)
    return float(live_scores[k])


def evaluate(scores, labels, policy: FixedThreshold | BpcerOnDev) -> EvalReport:
    """Error rates at the resolved threshold plus threshold-free AUC."""
    scores, live = _validate(np.asarray(scores), np.asarray(labels))
    if isinstance(policy, FixedThreshold):
        tau = float(policy.tau)
    elif isinstance(policy, BpcerOnDev):
        tau = threshold_for_bpcer(policy.dev_scores, policy.dev_labels, policy.target)
    else:
        raise ValueError(f"unknown threshold policy {policy!r}")

    accept = scores >= tau
    tp = int(np.sum(accept & live))
    fn = int(np.sum(~accept & live))
    fp = int(np.sum(accept & ~live))
    tn = int(np.sum(~accept & ~live))
    far = fp / (fp + tn)  # attacks accepted (APCER)
    frr = fn / (tp + fn)  # bona fide rejected (BPCER)
    auc = pairwise_auc(scores, live.astype(int))
    return EvalReport(
        hter=(far + frr) / 2.0,
        auc=auc,
        acer=(far + frr) / 2.0,
        apcer=far,
        bpcer=frr,
        threshold=tau,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def write_report(path: str | Path, report: EvalReport, *, seed: int, config_hash: str) -> None:
    """Serialize a report with its provenance; byte-stable for fixed inputs."""
    payload = report.to_dict()
    payload["seed"] = seed
    payload["config_hash"] = config_hash
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
