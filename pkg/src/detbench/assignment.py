"""Training-time label assignment between candidate boxes and ground truth.

Three strategies: a one-to-many baseline with a fixed IoU threshold per
ground-truth box, the same baseline with a scale-aware dynamic threshold
that drops for small objects, and a strict one-to-one matcher.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Box, iou


class AssignmentMode(enum.Enum):
    ONE_TO_MANY = "one_to_many"
    ONE_TO_ONE = "one_to_one"


@dataclass(frozen=True)
class StalConfig:
    """Scale-aware threshold parameters.

    ``threshold = tau_base * (1 - alpha * exp(-ratio_scale * area_obj / area_img))``.
    ``ratio_scale`` rescales the area ratio in the exponent; at 1.0 the decay
    is driven by the raw object-to-image area fraction.
    """

    tau_base: float = 0.5
    alpha: float = 0.5
    ratio_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_base <= 1.0:
            raise ValueError("tau_base must be in (0, 1]")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        if self.ratio_scale <= 0.0 or not math.isfinite(self.ratio_scale):
            raise ValueError("ratio_scale must be positive and finite")


@dataclass(frozen=True)
class AssignmentResult:
    """Pairs of (candidate_index, gt_index) plus ground truths left unmatched.

    In one-to-one mode no candidate or ground-truth index repeats; in
    one-to-many mode each candidate serves at most one ground truth but a
    ground truth may collect several candidates.
    """

    pairs: tuple[tuple[int, int], ...]
    unassigned_gt: tuple[int, ...]
    mode: AssignmentMode


def stal_threshold(area_obj: float, area_img: float, cfg: StalConfig) -> float:
    """Dynamic IoU threshold that decays exponentially for small objects."""
    if area_img <= 0.0:
        raise ValueError("image area must be positive")
    if area_obj < 0.0:
        raise ValueError("object area must be non-negative")
    ratio = min(area_obj, area_img) / area_img
    return cfg.tau_base * (1.0 - cfg.alpha * math.exp(-cfg.ratio_scale * ratio))


def stal_thresholds(gts: Sequence[Box], image_area: float, cfg: StalConfig) -> list[float]:
    """Per-ground-truth dynamic thresholds for :func:`assign_one_to_many`."""
    return [stal_threshold(g.area, image_area, cfg) for g in gts]


def _iou_matrix(candidates: Sequence[Box], gts: Sequence[Box]) -> np.ndarray:
    m = np.zeros((len(candidates), len(gts)))
    for i, c in enumerate(candidates):
        for j, g in enumerate(gts):
            m[i, j] = iou(c, g)
    return m


def assign_one_to_many(
    candidates: Sequence[Box],
    gts: Sequence[Box],
    thresholds: float | Sequence[float],
) -> AssignmentResult:
    """Pair every candidate with its best-IoU ground truth when that IoU
    clears the ground truth's own threshold.

    ``thresholds`` is either one value applied to every ground truth or a
    per-ground-truth sequence (e.g. from :func:`stal_thresholds`). Ties in
    best IoU go to the lowest ground-truth index.
    """
    if isinstance(thresholds, (int, float)):
        per_gt = [float(thresholds)] * len(gts)
    else:
        per_gt = [float(t) for t in thresholds]
        if len(per_gt) != len(gts):
            raise ValueError(f"{len(per_gt)} thresholds for {len(gts)} ground truths")

    if not candidates or not gts:
        return AssignmentResult(pairs=(), unassigned_gt=tuple(range(len(gts))), mode=AssignmentMode.ONE_TO_MANY)

    ious = _iou_matrix(candidates, gts)
    pairs: list[tuple[int, int]] = []
    assigned_gts: set[int] = set()
    for i in range(len(candidates)):
        j = int(np.argmax(ious[i]))  # argmax returns the lowest index on ties
        if ious[i, j] >= per_gt[j]:
            pairs.append((i, j))
            assigned_gts.add(j)
    unassigned = tuple(j for j in range(len(gts)) if j not in assigned_gts)
    return AssignmentResult(pairs=tuple(pairs), unassigned_gt=unassigned, mode=AssignmentMode.ONE_TO_MANY)


def assign_one_to_one(
    candidates: Sequence[Box],
    gts: Sequence[Box],
    min_iou: float = 0.0,
    *,
    method: str = "hungarian",
) -> AssignmentResult:
    """Match candidates and ground truths one-to-one.

    ``hungarian`` finds the matching maximizing total IoU over pairs with
    IoU >= ``min_iou`` (globally optimal); ``greedy`` repeatedly takes the
    highest remaining IoU pair, ties broken by lowest ground-truth index
    then lowest candidate index.
    """
    if not candidates or not gts:
        return AssignmentResult(pairs=(), unassigned_gt=tuple(range(len(gts))), mode=AssignmentMode.ONE_TO_ONE)

    ious = _iou_matrix(candidates, gts)
    if method == "hungarian":
        # Entries below min_iou are zeroed so they can never buy their way
        # into the optimum; qualifying pairs keep their true IoU.
        gains = np.where(ious >= min_iou, ious, 0.0)
        rows, cols = linear_sum_assignment(gains, maximize=True)
        pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if ious[i, j] >= min_iou]
    elif method == "greedy":
        order = sorted(
            ((i, j) for i in range(len(candidates)) for j in range(len(gts))),
            key=lambda ij: (-ious[ij[0], ij[1]], ij[1], ij[0]),
        )
        used_c: set[int] = set()
        used_g: set[int] = set()
        pairs = []
        for i, j in order:
            if ious[i, j] < min_iou:
                break
            if i in used_c or j in used_g:
                continue
            pairs.append((i, j))
            used_c.add(i)
            used_g.add(j)
    else:
        raise ValueError(f"unknown matching method: {method!r}")

    pairs.sort()
    matched_gts = {j for _, j in pairs}
    unassigned = tuple(j for j in range(len(gts)) if j not in matched_gts)
    return AssignmentResult(pairs=tuple(pairs), unassigned_gt=unassigned, mode=AssignmentMode.ONE_TO_ONE)
