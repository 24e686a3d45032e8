"""Classification/box losses, distributional decode, and loss scheduling.

Covers the two training objectives being compared: a fixed-weight
classification + box + distributional composite, and a two-term composite
whose classification weight follows a cosine schedule over training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Probabilities are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before the log.
BCE_CLAMP = 1e-7

# Default composite-loss weights of the fixed-weight objective.
DEFAULT_LAMBDA_CLS = 0.5
DEFAULT_LAMBDA_BOX = 7.5
DEFAULT_LAMBDA_DFL = 1.5


@dataclass
class ClassificationBatch:
    """Multi-label targets/predictions plus the positive-sample normalizer."""

    targets: np.ndarray
    predictions: np.ndarray
    num_positives: int

    def __post_init__(self) -> None:
        self.targets = np.asarray(self.targets, dtype=float)
        self.predictions = np.asarray(self.predictions, dtype=float)
        if self.targets.shape != self.predictions.shape:
            raise ValueError(
                f"targets shape {self.targets.shape} != predictions shape "
                f"{self.predictions.shape}"
            )
        if not np.all((self.targets == 0.0) | (self.targets == 1.0)):
            raise ValueError("targets must be 0/1 indicators")
        if not np.all(np.isfinite(self.predictions)):
            raise ValueError("predictions must be finite")
        if self.num_positives < 1:
            raise ValueError("num_positives must be >= 1")


def bce_loss(batch: ClassificationBatch) -> float:
    """Binary cross-entropy summed over instances and classes, divided by N_pos."""
    p = np.clip(batch.predictions, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = batch.targets
    total = np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(-total / batch.num_positives)


@dataclass(frozen=True)
class DflDistribution:
    """Logits over the n+1 integer bins 0..n of one box-side distance."""

    logits: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "logits", tuple(float(w) for w in self.logits))
        if len(self.logits) < 2:
            raise ValueError("need at least two bins")
        if not all(math.isfinite(w) for w in self.logits):
            raise ValueError("logits must be finite")

    @property
    def num_bins(self) -> int:
        """Upper bin index n (there are n+1 logits)."""
        return len(self.logits) - 1


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - math.log(np.sum(np.exp(shifted)))


def dfl_decode(d: DflDistribution) -> float:
    """Softmax expectation over bin indices; always inside [0, n]."""
    w = np.asarray(d.logits, dtype=float)
    p = np.exp(w - np.max(w))
    p /= p.sum()
    return float(np.dot(np.arange(len(w)), p))


def dfl_loss(d: DflDistribution, target: float) -> float:
    """Negative log-likelihood of the two bins bracketing ``target``.

    The bracketing bins are weighted linearly by their distance to the
    target; an integer target reduces to the single-bin NLL.
    """
    n = d.num_bins
    if not 0.0 <= target <= n:
        raise ValueError(f"target {target} outside [0, {n}]")
    log_p = _log_softmax(np.asarray(d.logits, dtype=float))
    lo = math.floor(target)
    hi = math.ceil(target)
    if lo == hi:
        return float(-log_p[lo])
    return float(-((hi - target) * log_p[lo] + (target - lo) * log_p[hi]))


@dataclass(frozen=True)
class DirectHead:
    """Directly regressed per-side distances (left, top, right, bottom)."""

    distances: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "distances", tuple(float(v) for v in self.distances))
        if not all(math.isfinite(v) for v in self.distances):
            raise ValueError("distances must be finite")


@dataclass(frozen=True)
class DistributionalHead:
    """One bin distribution per box side (left, top, right, bottom)."""

    sides: tuple[DflDistribution, DflDistribution, DflDistribution, DflDistribution]


HeadOutput = DirectHead | DistributionalHead


def decode_head(head: HeadOutput) -> tuple[float, float, float, float]:
    """Per-side distances: pass-through for direct heads, softmax expectation
    per side for distributional heads."""
    if isinstance(head, DirectHead):
        return head.distances
    if isinstance(head, DistributionalHead):
        left, top, right, bottom = head.sides
        return (dfl_decode(left), dfl_decode(top), dfl_decode(right), dfl_decode(bottom))
    raise TypeError(f"unsupported head output: {type(head).__name__}")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = DEFAULT_LAMBDA_CLS
    lambda_box: float = DEFAULT_LAMBDA_BOX
    lambda_dfl: float = DEFAULT_LAMBDA_DFL

    def __post_init__(self) -> None:
        ws = (self.lambda_cls, self.lambda_box, self.lambda_dfl)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValueError("weights must be finite and non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one weight must be positive")


def composite_loss_fixed(cls_loss: float, box_loss: float, dfl: float, weights: LossWeights) -> float:
    """Fixed-weight three-term objective."""
    if min(cls_loss, box_loss, dfl) < 0:
        raise ValueError("loss components must be non-negative")
    return weights.lambda_cls * cls_loss + weights.lambda_box * box_loss + weights.lambda_dfl * dfl


@dataclass(frozen=True)
class ProgLossSchedule:
    """Cosine schedule shifting weight from classification to box regression.

    ``weight(t) = lambda_max * cos(pi * t / (2 * total_epochs)) + lambda_min``,
    so the classification weight starts at ``lambda_max + lambda_min`` and ends
    at ``lambda_min``. ``lambda_max + lambda_min <= 1`` keeps the complementary
    box weight non-negative.
    """

    lambda_max: float = 0.9
    lambda_min: float = 0.1
    total_epochs: int = 100

    def __post_init__(self) -> None:
        if self.lambda_max < 0 or self.lambda_min < 0:
            raise ValueError("lambda_max and lambda_min must be >= 0")
        if self.lambda_max + self.lambda_min > 1.0:
            raise ValueError("lambda_max + lambda_min must not exceed 1")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def progloss_lambda(t: int, schedule: ProgLossSchedule) -> float:
    """Classification weight at epoch ``t`` of the cosine schedule."""
    if not 0 <= t <= schedule.total_epochs:
        raise ValueError(f"epoch {t} outside [0, {schedule.total_epochs}]")
    return schedule.lambda_max * math.cos(math.pi * t / (2.0 * schedule.total_epochs)) + schedule.lambda_min


def composite_loss_scheduled(cls_loss: float, box_loss: float, t: int, schedule: ProgLossSchedule) -> float:
    """Two-term convex combination ``w_t * cls + (1 - w_t) * box``."""
    if min(cls_loss, box_loss) < 0:
        raise ValueError("loss components must be non-negative")
    w = progloss_lambda(t, schedule)
    return w * cls_loss + (1.0 - w) * box_loss
