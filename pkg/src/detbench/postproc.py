"""Detection post-processing: confidence filtering, greedy NMS, and the
suppression-free pipeline, behind a single dispatch contract.

Greedy NMS repeatedly keeps the highest-scoring box and drops every box of
the same class overlapping it at or above the IoU threshold; the
suppression-free path only filters, sorts, and truncates. Both share one
deterministic ordering so outputs are reproducible across platforms.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .geometry import Box

DEFAULT_IOU_THRESHOLD = 0.7
EVAL_CONF_THRESHOLD = 0.001
DEPLOY_CONF_THRESHOLD = 0.25
DEFAULT_MAX_DETECTIONS = 300

DETECTION_CSV_FIELDS = ("image_id", "class_id", "score", "x_min", "y_min", "x_max", "y_max")


class PipelineMode(enum.Enum):
    NMS = "nms"
    END_TO_END = "e2e"


@dataclass(frozen=True)
class Detection:
    """A scored, classified box."""

    box: Box
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def sort_key(d: Detection) -> tuple:
    """Deterministic total order: score descending, then class, then coords."""
    return (-d.score, d.class_id, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max)


@dataclass(frozen=True)
class PipelineConfig:
    """Post-processing switches shared by both pipeline variants.

    Defaults target evaluation (keep nearly everything); use
    ``deployment()`` for the higher-confidence deployment profile.
    """

    mode: PipelineMode = PipelineMode.NMS
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    conf_threshold: float = EVAL_CONF_THRESHOLD
    class_aware: bool = True
    max_detections: int = DEFAULT_MAX_DETECTIONS

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must be in (0, 1)")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must be in [0, 1]")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")

    @classmethod
    def deployment(cls, mode: PipelineMode = PipelineMode.NMS, **kwargs) -> "PipelineConfig":
        kwargs.setdefault("conf_threshold", DEPLOY_CONF_THRESHOLD)
        return cls(mode=mode, **kwargs)


def _filtered_order(dets: Sequence[Detection], cfg: PipelineConfig) -> tuple[np.ndarray, ...]:
    """Indices of confidence-passing detections in the deterministic total
    order, plus their unpacked coordinate/class arrays (in that order)."""
    n = len(dets)
    scores = np.fromiter((d.score for d in dets), dtype=float, count=n)
    x1 = np.fromiter((d.box.x_min for d in dets), dtype=float, count=n)
    y1 = np.fromiter((d.box.y_min for d in dets), dtype=float, count=n)
    x2 = np.fromiter((d.box.x_max for d in dets), dtype=float, count=n)
    y2 = np.fromiter((d.box.y_max for d in dets), dtype=float, count=n)
    cls = np.fromiter((d.class_id for d in dets), dtype=np.int64, count=n)

    kept = np.nonzero(scores >= cfg.conf_threshold)[0]
    # last lexsort key is primary: score desc, then class, then coordinates
    order = kept[np.lexsort((y2[kept], x2[kept], y1[kept], x1[kept], cls[kept], -scores[kept]))]
    return order, x1[order], y1[order], x2[order], y2[order], cls[order]


def nms(dets: Sequence[Detection], cfg: PipelineConfig) -> list[Detection]:
    """Greedy non-maximum suppression.

    Survivors come back in descending-score order, truncated to
    ``cfg.max_detections``; suppression happens within a class unless
    ``cfg.class_aware`` is off.
    """
    if cfg.mode is not PipelineMode.NMS:
        raise ValueError("nms requires a config with mode=NMS")
    if not dets:
        return []
    order_idx, x1, y1, x2, y2, cls = _filtered_order(dets, cfg)
    if order_idx.size == 0:
        return []

    if cfg.class_aware:
        # Shift each class into its own disjoint coordinate island so
        # cross-class IoU is exactly zero and one greedy pass handles all
        # classes at once.
        span = max(float(np.max(x2) - np.min(x1)), float(np.max(y2) - np.min(y1)), 1.0) + 1.0
        offsets = cls.astype(float) * span
        x1, x2 = x1 + offsets, x2 + offsets
        y1, y2 = y1 + offsets, y2 + offsets
    areas = (x2 - x1) * (y2 - y1)

    keep: list[int] = []
    live = np.arange(order_idx.size)
    thr = cfg.iou_threshold
    while live.size > 0:
        i = live[0]
        keep.append(int(order_idx[i]))
        if len(keep) >= cfg.max_detections:
            break
        rest = live[1:]
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        np.maximum(iw, 0.0, out=iw)
        np.maximum(ih, 0.0, out=ih)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        # inter is 0 wherever union is 0 (two degenerate boxes), so the
        # clamped divide keeps the zero-union convention without a branch
        overlap = inter / np.maximum(union, 1e-300)
        live = rest[overlap < thr]
    return [dets[i] for i in keep]


def end_to_end_filter(dets: Sequence[Detection], cfg: PipelineConfig) -> list[Detection]:
    """Confidence filter + deterministic sort + truncation; no suppression."""
    if cfg.mode is not PipelineMode.END_TO_END:
        raise ValueError("end_to_end_filter requires a config with mode=END_TO_END")
    if not dets:
        return []
    order_idx = _filtered_order(dets, cfg)[0]
    return [dets[i] for i in order_idx[: cfg.max_detections]]


def run_pipeline(dets: Sequence[Detection], cfg: PipelineConfig) -> list[Detection]:
    """Dispatch to the configured post-processing variant."""
    if cfg.mode is PipelineMode.NMS:
        return nms(dets, cfg)
    return end_to_end_filter(dets, cfg)


# --- serialization ---------------------------------------------------------


def detections_to_csv(dets_by_image: dict[str, Sequence[Detection]]) -> str:
    """CSV with one row per detection, images in sorted id order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DETECTION_CSV_FIELDS)
    for image_id in sorted(dets_by_image):
        for d in dets_by_image[image_id]:
            writer.writerow(
                [image_id, d.class_id, f"{d.score:.6f}",
                 f"{d.box.x_min:.6f}", f"{d.box.y_min:.6f}",
                 f"{d.box.x_max:.6f}", f"{d.box.y_max:.6f}"]
            )
    return buf.getvalue()


def detections_to_jsonl(dets_by_image: dict[str, Sequence[Detection]]) -> str:
    lines = []
    for image_id in sorted(dets_by_image):
        for d in dets_by_image[image_id]:
            lines.append(json.dumps({
                "image_id": image_id,
                "class_id": d.class_id,
                "score": round(d.score, 6),
                "x_min": round(d.box.x_min, 6),
                "y_min": round(d.box.y_min, 6),
                "x_max": round(d.box.x_max, 6),
                "y_max": round(d.box.y_max, 6),
            }, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def _detection_from_fields(row: dict, where: str) -> tuple[str, Detection]:
    try:
        det = Detection(
            box=Box(float(row["x_min"]), float(row["y_min"]),
                    float(row["x_max"]), float(row["y_max"])),
            class_id=int(row["class_id"]),
            score=float(row["score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad detection record at {where}: {exc}") from exc
    return str(row["image_id"]), det


def detections_from_csv(text: str) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    reader = csv.DictReader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=2):
        image_id, det = _detection_from_fields(row, f"line {lineno}")
        out.setdefault(image_id, []).append(det)
    return out


def detections_from_jsonl(text: str) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"bad JSON at line {lineno}: {exc}") from exc
        image_id, det = _detection_from_fields(row, f"line {lineno}")
        out.setdefault(image_id, []).append(det)
    return out


def load_detections(path) -> dict[str, list[Detection]]:
    """Read a detection file, picking the format from the extension."""
    from pathlib import Path

    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() in {".jsonl", ".json"}:
        return detections_from_jsonl(text)
    return detections_from_csv(text)


def iter_all(dets_by_image: dict[str, Sequence[Detection]]) -> Iterable[tuple[str, Detection]]:
    for image_id in sorted(dets_by_image):
        for d in dets_by_image[image_id]:
            yield image_id, d
