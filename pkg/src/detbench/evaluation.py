"""Detection evaluation: matching, precision/recall/F1, AP and mAP over IoU
thresholds, confusion matrices, and Pareto-frontier extraction.

Matching is greedy in score order, class-aware, one ground truth per
detection. AP uses interpolated precision sampled at 101 recall levels by
default (an 11-point mode is available). Precision/recall points are taken
at distinct score thresholds, so results do not depend on how equal-score
detections happen to be ordered.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou
from .postproc import DEPLOY_CONF_THRESHOLD, Detection, sort_key

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

RECALL_LEVELS_101 = tuple(round(0.01 * i, 2) for i in range(101))
RECALL_LEVELS_11 = tuple(round(0.1 * i, 1) for i in range(11))

BACKGROUND = "background"


@dataclass(frozen=True)
class GroundTruthInstance:
    """An annotated object: where it is, what it is, which image it is in."""

    image_id: str
    class_id: int
    box: Box
    difficult: bool = False


class DetLabel(enum.Enum):
    TP = "tp"
    FP = "fp"
    IGNORED = "ignored"  # matched a difficult ground truth: scored as neither


@dataclass
class MatchResult:
    """Per-detection labels and per-ground-truth matched flags.

    ``labels[image_id][k]`` refers to the k-th detection as passed in;
    ``gt_matched`` is keyed by position in the ground-truth list.
    """

    labels: dict[str, list[DetLabel]]
    gt_matched: list[bool]
    num_gt: dict[int, int]  # non-difficult ground truths per class


def group_gts_by_image(gts: Sequence[GroundTruthInstance]) -> dict[str, list[tuple[int, GroundTruthInstance]]]:
    grouped: dict[str, list[tuple[int, GroundTruthInstance]]] = {}
    for idx, gt in enumerate(gts):
        grouped.setdefault(gt.image_id, []).append((idx, gt))
    return grouped


def match_detections(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruthInstance],
    iou_thr: float,
    *,
    class_aware: bool = True,
    ignore_difficult: bool = True,
) -> MatchResult:
    """Label every detection TP/FP by greedy best-IoU matching in score order.

    A detection is a TP when its best-IoU not-yet-matched ground truth of the
    same class (same image) reaches ``iou_thr``; each ground truth is consumed
    at most once. Detections that only reach a difficult ground truth are
    labeled IGNORED and difficult ground truths are never consumed nor counted.
    """
    gt_by_image = group_gts_by_image(gts)
    gt_matched = [False] * len(gts)
    labels: dict[str, list[DetLabel]] = {}
    num_gt: dict[int, int] = {}
    for gt in gts:
        if gt.difficult and ignore_difficult:
            continue
        num_gt[gt.class_id] = num_gt.get(gt.class_id, 0) + 1

    for image_id, dets in dets_by_image.items():
        image_labels = [DetLabel.FP] * len(dets)
        candidates = gt_by_image.get(image_id, [])
        order = sorted(range(len(dets)), key=lambda k: sort_key(dets[k]))
        for k in order:
            det = dets[k]
            best_iou, best_idx = 0.0, -1
            ignored_hit = False
            for gt_idx, gt in candidates:
                if class_aware and gt.class_id != det.class_id:
                    continue
                overlap = iou(det.box, gt.box)
                if overlap < iou_thr:
                    continue
                if gt.difficult and ignore_difficult:
                    ignored_hit = True
                    continue
                if gt_matched[gt_idx]:
                    continue
                if overlap > best_iou:
                    best_iou, best_idx = overlap, gt_idx
            if best_idx >= 0:
                gt_matched[best_idx] = True
                image_labels[k] = DetLabel.TP
            elif ignored_hit:
                image_labels[k] = DetLabel.IGNORED
        labels[image_id] = image_labels
    return MatchResult(labels=labels, gt_matched=gt_matched, num_gt=num_gt)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, and their harmonic mean, with 0 for empty denominators."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return p, r, f1_from_pr(p, r)


def f1_from_pr(precision: float, recall: float) -> float:
    """Harmonic mean of an already-computed precision/recall pair."""
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _pr_points(scored: Sequence[tuple[float, bool]], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) sampled at each distinct score threshold."""
    scores = np.array([s for s, _ in scored], dtype=float)
    tps = np.array([t for _, t in scored], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    scores, tps = scores[order], tps[order]
    cum_tp = np.cumsum(tps)
    cum_fp = np.cumsum(~tps)
    # keep only the last rank of each tie group: PR points exist per distinct
    # threshold, making AP independent of equal-score ordering
    last = np.append(np.nonzero(np.diff(scores))[0], len(scores) - 1)
    recall = cum_tp[last] / num_gt
    precision = cum_tp[last] / (cum_tp[last] + cum_fp[last])
    return recall, precision


def average_precision(
    scored: Sequence[tuple[float, bool]],
    num_gt: int,
    *,
    interpolation: str = "101point",
) -> float | None:
    """Area under the interpolated PR curve for one class.

    ``scored`` holds (score, is_tp) pairs; IGNORED detections must already be
    excluded. Returns None when the class has no ground truth (AP undefined).
    """
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0:
        return None
    if interpolation == "101point":
        levels = RECALL_LEVELS_101
    elif interpolation == "11point":
        levels = RECALL_LEVELS_11
    else:
        raise ValueError(f"unknown interpolation: {interpolation!r}")
    if not scored:
        return 0.0

    recall, precision = _pr_points(scored, num_gt)
    # precision envelope: max precision among points with recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, np.array(levels), side="left")
    interp = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(np.mean(interp))


def _scored_by_class(
    dets_by_image: Mapping[str, Sequence[Detection]],
    match: MatchResult,
) -> dict[int, list[tuple[float, bool]]]:
    out: dict[int, list[tuple[float, bool]]] = {}
    for image_id, dets in dets_by_image.items():
        for det, label in zip(dets, match.labels[image_id]):
            if label is DetLabel.IGNORED:
                continue
            out.setdefault(det.class_id, []).append((det.score, label is DetLabel.TP))
    return out


def ap_by_class(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruthInstance],
    iou_thr: float,
    *,
    interpolation: str = "101point",
    ignore_difficult: bool = True,
) -> dict[int, float | None]:
    """AP per class at one IoU threshold; None for classes with no ground truth."""
    match = match_detections(dets_by_image, gts, iou_thr, ignore_difficult=ignore_difficult)
    scored = _scored_by_class(dets_by_image, match)
    classes = set(scored) | set(match.num_gt)
    return {
        c: average_precision(scored.get(c, []), match.num_gt.get(c, 0), interpolation=interpolation)
        for c in sorted(classes)
    }


def map_range(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruthInstance],
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    *,
    interpolation: str = "101point",
    ignore_difficult: bool = True,
) -> float:
    """Mean over IoU thresholds of the class-mean AP.

    Classes without ground truth are left out of the class mean entirely.
    """
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    per_thr = []
    for thr in thresholds:
        aps = [a for a in ap_by_class(
            dets_by_image, gts, thr,
            interpolation=interpolation, ignore_difficult=ignore_difficult,
        ).values() if a is not None]
        per_thr.append(float(np.mean(aps)) if aps else 0.0)
    return float(np.mean(per_thr))


def confusion_matrix(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruthInstance],
    iou_thr: float = 0.5,
    conf_thr: float = DEPLOY_CONF_THRESHOLD,
    *,
    num_classes: int | None = None,
    ignore_difficult: bool = True,
) -> np.ndarray:
    """(C+1) x (C+1) count matrix; row = true class, column = predicted class,
    last row/column = background.

    Matching here is class-agnostic so cross-class confusions land on
    off-diagonal cells instead of being split into two background entries.
    """
    if num_classes is None:
        ids = [gt.class_id for gt in gts]
        ids += [d.class_id for dets in dets_by_image.values() for d in dets]
        num_classes = max(ids) + 1 if ids else 0
    mat = np.zeros((num_classes + 1, num_classes + 1), dtype=int)
    bg = num_classes

    gt_by_image = group_gts_by_image(gts)
    matched = [False] * len(gts)
    for image_id, dets in dets_by_image.items():
        candidates = gt_by_image.get(image_id, [])
        kept = sorted((d for d in dets if d.score >= conf_thr), key=sort_key)
        for det in kept:
            best_iou, best_idx, best_cls = 0.0, -1, -1
            ignored_hit = False
            for gt_idx, gt in candidates:
                overlap = iou(det.box, gt.box)
                if overlap < iou_thr:
                    continue
                if gt.difficult and ignore_difficult:
                    ignored_hit = True
                    continue
                if matched[gt_idx]:
                    continue
                if overlap > best_iou:
                    best_iou, best_idx, best_cls = overlap, gt_idx, gt.class_id
            if best_idx >= 0:
                matched[best_idx] = True
                mat[best_cls, det.class_id] += 1
            elif not ignored_hit:
                mat[bg, det.class_id] += 1
    for gt_idx, gt in enumerate(gts):
        if gt.difficult and ignore_difficult:
            continue
        if not matched[gt_idx]:
            mat[gt.class_id, bg] += 1
    return mat


# --- report ----------------------------------------------------------------


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    ap50: float | None
    ap50_95: float | None


@dataclass
class AggregateMetrics:
    precision: float
    recall: float
    f1: float
    map50: float
    map50_95: float


@dataclass
class EvalReport:
    per_class: dict[int, ClassMetrics]
    aggregate: AggregateMetrics
    confusion: np.ndarray

    def to_json(self) -> str:
        def _round(x):
            return None if x is None else round(float(x), 6)

        payload = {
            "per_class": {
                str(c): {
                    "precision": _round(m.precision),
                    "recall": _round(m.recall),
                    "f1": _round(m.f1),
                    "ap50": _round(m.ap50),
                    "ap50_95": _round(m.ap50_95),
                }
                for c, m in sorted(self.per_class.items())
            },
            "aggregate": {
                "precision": _round(self.aggregate.precision),
                "recall": _round(self.aggregate.recall),
                "f1": _round(self.aggregate.f1),
                "map50": _round(self.aggregate.map50),
                "map50_95": _round(self.aggregate.map50_95),
            },
            "confusion": self.confusion.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class_id", "precision", "recall", "f1", "ap50", "ap50_95"])

        def _fmt(x):
            return "" if x is None else f"{x:.6f}"

        for c, m in sorted(self.per_class.items()):
            writer.writerow([c, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), _fmt(m.ap50), _fmt(m.ap50_95)])
        a = self.aggregate
        writer.writerow(["aggregate", _fmt(a.precision), _fmt(a.recall), _fmt(a.f1), _fmt(a.map50), _fmt(a.map50_95)])
        return buf.getvalue()


def evaluate(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruthInstance],
    *,
    num_classes: int | None = None,
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    pr_iou: float = 0.5,
    pr_conf: float = DEPLOY_CONF_THRESHOLD,
    interpolation: str = "101point",
    aggregation: str = "macro",
    ignore_difficult: bool = True,
) -> EvalReport:
    """Full evaluation report.

    AP/mAP use every detection (any score); precision/recall/F1 and the
    confusion matrix are computed at the ``pr_conf`` operating point with IoU
    ``pr_iou``. Aggregation over classes is macro (per-class mean, classes
    with ground truth only) or micro (instance-pooled counts) for P/R/F1;
    mAP is a class mean by definition.
    """
    if aggregation not in ("macro", "micro"):
        raise ValueError(f"unknown aggregation: {aggregation!r}")

    ap50 = ap_by_class(dets_by_image, gts, pr_iou, interpolation=interpolation,
                       ignore_difficult=ignore_difficult)
    ap_range: dict[int, list[float]] = {}
    for thr in iou_thresholds:
        for c, a in ap_by_class(dets_by_image, gts, thr, interpolation=interpolation,
                                ignore_difficult=ignore_difficult).items():
            if a is not None:
                ap_range.setdefault(c, []).append(a)

    conf_dets = {
        image_id: [d for d in dets if d.score >= pr_conf]
        for image_id, dets in dets_by_image.items()
    }
    match = match_detections(conf_dets, gts, pr_iou, ignore_difficult=ignore_difficult)
    tp_by_class: dict[int, int] = {}
    fp_by_class: dict[int, int] = {}
    for image_id, dets in conf_dets.items():
        for det, label in zip(dets, match.labels[image_id]):
            if label is DetLabel.TP:
                tp_by_class[det.class_id] = tp_by_class.get(det.class_id, 0) + 1
            elif label is DetLabel.FP:
                fp_by_class[det.class_id] = fp_by_class.get(det.class_id, 0) + 1

    classes = sorted(set(ap50) | set(match.num_gt) | set(tp_by_class) | set(fp_by_class))
    per_class: dict[int, ClassMetrics] = {}
    for c in classes:
        tp = tp_by_class.get(c, 0)
        fp = fp_by_class.get(c, 0)
        fn = match.num_gt.get(c, 0) - tp
        p, r, f1 = precision_recall_f1(tp, fp, fn)
        aps = ap_range.get(c)
        per_class[c] = ClassMetrics(
            precision=p, recall=r, f1=f1,
            ap50=ap50.get(c),
            ap50_95=float(np.mean(aps)) if aps else None,
        )

    scored_classes = [c for c in classes if match.num_gt.get(c, 0) > 0]
    if aggregation == "macro":
        if scored_classes:
            agg_p = float(np.mean([per_class[c].precision for c in scored_classes]))
            agg_r = float(np.mean([per_class[c].recall for c in scored_classes]))
            agg_f1 = float(np.mean([per_class[c].f1 for c in scored_classes]))
        else:
            agg_p = agg_r = agg_f1 = 0.0
    else:
        tp = sum(tp_by_class.values())
        fp = sum(fp_by_class.values())
        fn = sum(match.num_gt.values()) - tp
        agg_p, agg_r, agg_f1 = precision_recall_f1(tp, fp, fn)

    map50_vals = [ap50[c] for c in scored_classes if ap50.get(c) is not None]
    map_range_vals = [per_class[c].ap50_95 for c in scored_classes if per_class[c].ap50_95 is not None]
    aggregate = AggregateMetrics(
        precision=agg_p,
        recall=agg_r,
        f1=agg_f1,
        map50=float(np.mean(map50_vals)) if map50_vals else 0.0,
        map50_95=float(np.mean(map_range_vals)) if map_range_vals else 0.0,
    )

    confusion = confusion_matrix(
        dets_by_image, gts, iou_thr=pr_iou, conf_thr=pr_conf,
        num_classes=num_classes, ignore_difficult=ignore_difficult,
    )
    return EvalReport(per_class=per_class, aggregate=aggregate, confusion=confusion)


# --- model cost/accuracy records and Pareto analysis ------------------------

COST_KEYS = ("gpu_latency_ms", "cpu_latency_ms", "params_m", "size_mb", "gflops")


@dataclass(frozen=True)
class ModelRecord:
    """A named model with an accuracy coordinate and positive cost coordinates."""

    name: str
    accuracy: float
    costs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.costs:
            raise ValueError("at least one cost must be present")
        for key, value in self.costs.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"cost {key!r} must be positive and finite, got {value}")

    def cost(self, key: str) -> float:
        try:
            return self.costs[key]
        except KeyError:
            raise ValueError(f"model {self.name!r} has no cost {key!r}") from None


def pareto_frontier(models: Sequence[ModelRecord], cost_key: str) -> set[str]:
    """Names of models not dominated on (accuracy up, cost down).

    A model is dominated when some other model is at least as accurate AND at
    most as costly, with at least one strict inequality; exact ties on both
    axes keep both models.
    """
    for m in models:
        m.cost(cost_key)  # validate up front
    frontier: set[str] = set()
    for m in models:
        dominated = any(
            other is not m
            and other.accuracy >= m.accuracy
            and other.cost(cost_key) <= m.cost(cost_key)
            and (other.accuracy > m.accuracy or other.cost(cost_key) < m.cost(cost_key))
            for other in models
        )
        if not dominated:
            frontier.add(m.name)
    return frontier


def pareto_csv(models: Sequence[ModelRecord], cost_key: str) -> str:
    """CSV rows (name, accuracy, cost, on_frontier) in input order."""
    frontier = pareto_frontier(models, cost_key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "accuracy", cost_key, "on_frontier"])
    for m in models:
        writer.writerow([m.name, f"{m.accuracy:.6g}", f"{m.cost(cost_key):.6g}",
                         str(m.name in frontier).lower()])
    return buf.getvalue()


def load_model_records(path, *, accuracy_col: str = "map50_95") -> list[ModelRecord]:
    """Read model records from a CSV with a name column, an accuracy column,
    and any subset of the standard cost columns."""
    from pathlib import Path

    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    records = []
    for lineno, row in enumerate(rows, start=2):
        if not row.get("name"):
            raise ValueError(f"line {lineno}: missing model name")
        if row.get(accuracy_col) in (None, ""):
            raise ValueError(f"line {lineno}: missing accuracy column {accuracy_col!r}")
        costs = {}
        for key in COST_KEYS:
            value = row.get(key)
            if value not in (None, ""):
                costs[key] = float(value)
        records.append(ModelRecord(name=row["name"], accuracy=float(row[accuracy_col]), costs=costs))
    return records
