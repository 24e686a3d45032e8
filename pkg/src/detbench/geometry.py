"""Axis-aligned bounding boxes, IoU, and the CIoU loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Minimum side length substituted for degenerate predictions inside the
# aspect-ratio term, and the stabiliser in the alpha denominator.
_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in corner form (x_min, y_min, x_max, y_max).

    Coordinates may be pixels or normalized units, as long as both boxes of
    any pairwise operation share the same frame.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box corners out of order: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        """Build from top-left corner plus width/height."""
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        """Build from center plus width/height."""
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, k: float) -> "Box":
        return Box(self.x_min * k, self.y_min * k, self.x_max * k, self.y_max * k)


@dataclass(frozen=True)
class CiouBreakdown:
    """All terms of the CIoU loss for one prediction/target pair.

    The loss decomposes as
    ``1 - iou + center_dist_sq / enclosing_diag_sq + aspect_weight * aspect_term``.
    """

    iou: float
    center_dist_sq: float
    enclosing_diag_sq: float
    aspect_term: float
    aspect_weight: float
    loss: float


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def ciou_loss(pred: Box, gt: Box) -> CiouBreakdown:
    """CIoU loss between a predicted box and a positive-area target box.

    The aspect term is ``(4 / pi^2) * (atan(w_gt / h_gt) - atan(w_pred / h_pred))^2``
    and its weight is ``v / ((1 - iou) + v + eps)``, the usual CIoU convention.
    Degenerate prediction sides are clamped to a tiny epsilon inside the atan
    ratio instead of failing.
    """
    if gt.area <= 0.0:
        raise ValueError("ground-truth box must have positive area")

    overlap = iou(pred, gt)

    pcx, pcy = pred.center
    gcx, gcy = gt.center
    center_dist_sq = (pcx - gcx) ** 2 + (pcy - gcy) ** 2

    enc_w = max(pred.x_max, gt.x_max) - min(pred.x_min, gt.x_min)
    enc_h = max(pred.y_max, gt.y_max) - min(pred.y_min, gt.y_min)
    enclosing_diag_sq = enc_w**2 + enc_h**2

    # Both boxes degenerate and coincident: the distance term is 0 by convention.
    center_term = center_dist_sq / enclosing_diag_sq if enclosing_diag_sq > 0.0 else 0.0

    v = (4.0 / math.pi**2) * (
        math.atan(gt.width / gt.height)
        - math.atan(max(pred.width, _EPS) / max(pred.height, _EPS))
    ) ** 2
    alpha = v / ((1.0 - overlap) + v + _EPS)

    loss = 1.0 - overlap + center_term + alpha * v
    return CiouBreakdown(
        iou=overlap,
        center_dist_sq=center_dist_sq,
        enclosing_diag_sq=enclosing_diag_sq,
        aspect_term=v,
        aspect_weight=alpha,
        loss=loss,
    )
