"""Annotation parsing and conversion (VOC XML, VisDrone text, normalized
label lines), deterministic seeded splits, and synthetic scene generation.
"""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from collections.abc import Sequence
from dataclasses import dataclass
from xml.etree.ElementTree import ParseError

import numpy as np

from .evaluation import GroundTruthInstance
from .geometry import Box, iou
from .postproc import Detection

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus",
    "car", "cat", "chair", "cow", "diningtable", "dog", "horse",
    "motorbike", "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)
VOC_CLASS_IDS = {name: idx for idx, name in enumerate(VOC_CLASSES)}

# VisDrone annotation lines carry: left, top, width, height, score, category,
# truncation, occlusion. Category 0 marks ignored regions and category 11 the
# "others" class; both are excluded. Categories 1-10 map to class ids 0-9:
VISDRONE_CLASSES = (
    "pedestrian", "people", "bicycle", "car", "van",
    "truck", "tricycle", "awning-tricycle", "bus", "motor",
)
VISDRONE_IGNORED = 0
VISDRONE_OTHERS = 11


class DataFormatError(ValueError):
    """Malformed annotation input; the message names the offending piece."""


@dataclass
class AnnotationRecord:
    """All instances of one image, with the image dimensions they live in."""

    image_id: str
    image_width: int
    image_height: int
    instances: list[GroundTruthInstance]

    def __post_init__(self) -> None:
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class NormalizedLabelLine:
    """Center-form box normalized by image dimensions, plus its class id."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        slack = 1e-6
        for lo, hi in ((self.cx - self.w / 2, self.cx + self.w / 2),
                       (self.cy - self.h / 2, self.cy + self.h / 2)):
            if lo < -slack or hi > 1.0 + slack:
                raise ValueError(f"normalized box leaves the unit square: {self}")


# --- VOC XML ----------------------------------------------------------------


def _require(elem: ET.Element | None, name: str, context: str) -> ET.Element:
    if elem is None:
        raise DataFormatError(f"missing <{name}> element in {context}")
    return elem


def _elem_float(parent: ET.Element, name: str, context: str) -> float:
    node = _require(parent.find(name), name, context)
    try:
        return float(node.text)
    except (TypeError, ValueError):
        raise DataFormatError(f"non-numeric <{name}> in {context}: {node.text!r}") from None


def parse_voc_xml(document: str, image_id: str | None = None) -> AnnotationRecord:
    """Parse one VOC annotation document.

    Class names are matched case-insensitively against the canonical 20-class
    table; unknown names, missing <size>, or malformed XML raise
    :class:`DataFormatError`. Boxes are clamped to the image bounds.
    """
    try:
        root = ET.fromstring(document)
    except ParseError as exc:
        raise DataFormatError(f"malformed XML: {exc}") from exc

    if image_id is None:
        filename = root.findtext("filename")
        if not filename:
            raise DataFormatError("missing <filename> element and no image_id given")
        image_id = filename.rsplit(".", 1)[0]

    size = _require(root.find("size"), "size", "annotation")
    width = int(_elem_float(size, "width", "<size>"))
    height = int(_elem_float(size, "height", "<size>"))
    if width <= 0 or height <= 0:
        raise DataFormatError(f"non-positive image size {width}x{height} in <size>")

    instances: list[GroundTruthInstance] = []
    for obj in root.iter("object"):
        name = (obj.findtext("name") or "").strip().lower()
        if name not in VOC_CLASS_IDS:
            raise DataFormatError(f"unknown class name {name!r} in <object>")
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        bndbox = _require(obj.find("bndbox"), "bndbox", f"object {name!r}")
        x_min = _elem_float(bndbox, "xmin", "<bndbox>")
        y_min = _elem_float(bndbox, "ymin", "<bndbox>")
        x_max = _elem_float(bndbox, "xmax", "<bndbox>")
        y_max = _elem_float(bndbox, "ymax", "<bndbox>")
        box = clamp_box(Box(x_min, y_min, x_max, y_max), width, height)
        instances.append(GroundTruthInstance(
            image_id=image_id, class_id=VOC_CLASS_IDS[name], box=box, difficult=difficult,
        ))
    return AnnotationRecord(image_id=image_id, image_width=width, image_height=height,
                            instances=instances)


def voc_xml_string(rec: AnnotationRecord) -> str:
    """Render a record back to a VOC-style XML document."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = f"{rec.image_id}.jpg"
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(rec.image_width)
    ET.SubElement(size, "height").text = str(rec.image_height)
    ET.SubElement(size, "depth").text = "3"
    for inst in rec.instances:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = VOC_CLASSES[inst.class_id]
        ET.SubElement(obj, "difficult").text = "1" if inst.difficult else "0"
        bndbox = ET.SubElement(obj, "bndbox")
        ET.SubElement(bndbox, "xmin").text = repr(inst.box.x_min)
        ET.SubElement(bndbox, "ymin").text = repr(inst.box.y_min)
        ET.SubElement(bndbox, "xmax").text = repr(inst.box.x_max)
        ET.SubElement(bndbox, "ymax").text = repr(inst.box.y_max)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# --- VisDrone ---------------------------------------------------------------


def parse_visdrone_line(line: str, *, image_id: str = "", line_number: int = 0) -> GroundTruthInstance | None:
    """Parse one VisDrone annotation line to an instance, or None for the
    excluded categories (ignored regions and "others")."""
    fields = [f.strip() for f in line.strip().rstrip(",").split(",")]
    if len(fields) != 8:
        raise DataFormatError(f"line {line_number}: expected 8 fields, got {len(fields)}")
    try:
        left, top, width, height, _score, category, _trunc, _occl = (int(f) for f in fields)
    except ValueError:
        raise DataFormatError(f"line {line_number}: non-integer field in {line.strip()!r}") from None
    if category in (VISDRONE_IGNORED, VISDRONE_OTHERS):
        return None
    if not 1 <= category <= 10:
        raise DataFormatError(f"line {line_number}: category {category} outside 0..11")
    if width < 0 or height < 0:
        raise DataFormatError(f"line {line_number}: negative box size {width}x{height}")
    return GroundTruthInstance(
        image_id=image_id,
        class_id=category - 1,
        box=Box(float(left), float(top), float(left + width), float(top + height)),
    )


def parse_visdrone_annotations(text: str, image_id: str, image_width: int, image_height: int) -> AnnotationRecord:
    """Parse a whole VisDrone annotation file; dimensions come from the caller
    because the format does not carry them."""
    instances = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        inst = parse_visdrone_line(line, image_id=image_id, line_number=lineno)
        if inst is None:
            continue
        instances.append(GroundTruthInstance(
            image_id=image_id, class_id=inst.class_id,
            box=clamp_box(inst.box, image_width, image_height),
            difficult=inst.difficult,
        ))
    return AnnotationRecord(image_id=image_id, image_width=image_width,
                            image_height=image_height, instances=instances)


# --- normalized label lines ---------------------------------------------------


def clamp_box(box: Box, width: float, height: float) -> Box:
    return Box(
        min(max(box.x_min, 0.0), float(width)),
        min(max(box.y_min, 0.0), float(height)),
        min(max(box.x_max, 0.0), float(width)),
        min(max(box.y_max, 0.0), float(height)),
    )


def to_normalized(rec: AnnotationRecord) -> list[NormalizedLabelLine]:
    """Center-form normalized lines, one per instance, clamped to the image."""
    lines = []
    for inst in rec.instances:
        b = clamp_box(inst.box, rec.image_width, rec.image_height)
        cx, cy = b.center
        lines.append(NormalizedLabelLine(
            class_id=inst.class_id,
            cx=cx / rec.image_width,
            cy=cy / rec.image_height,
            w=b.width / rec.image_width,
            h=b.height / rec.image_height,
        ))
    return lines


def denormalize(line: NormalizedLabelLine, width: float, height: float) -> Box:
    return Box.from_cxcywh(line.cx * width, line.cy * height, line.w * width, line.h * height)


def format_label_lines(lines: Sequence[NormalizedLabelLine]) -> str:
    # 10 decimals keeps sub-1e-6-pixel fidelity even for 2000 px images
    return "".join(
        f"{l.class_id} {l.cx:.10f} {l.cy:.10f} {l.w:.10f} {l.h:.10f}\n" for l in lines
    )


def parse_label_lines(text: str) -> list[NormalizedLabelLine]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataFormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            out.append(NormalizedLabelLine(
                class_id=int(parts[0]),
                cx=float(parts[1]), cy=float(parts[2]),
                w=float(parts[3]), h=float(parts[4]),
            ))
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
    return out


# --- ground-truth CSV ---------------------------------------------------------

GT_CSV_FIELDS = ("image_id", "class_id", "x_min", "y_min", "x_max", "y_max", "difficult")


def gts_to_csv(gts: Sequence[GroundTruthInstance]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GT_CSV_FIELDS)
    for gt in gts:
        writer.writerow([gt.image_id, gt.class_id,
                         f"{gt.box.x_min:.6f}", f"{gt.box.y_min:.6f}",
                         f"{gt.box.x_max:.6f}", f"{gt.box.y_max:.6f}",
                         int(gt.difficult)])
    return buf.getvalue()


def gts_from_csv(text: str) -> list[GroundTruthInstance]:
    out = []
    for lineno, row in enumerate(csv.DictReader(io.StringIO(text)), start=2):
        try:
            out.append(GroundTruthInstance(
                image_id=str(row["image_id"]),
                class_id=int(row["class_id"]),
                box=Box(float(row["x_min"]), float(row["y_min"]),
                        float(row["x_max"]), float(row["y_max"])),
                difficult=str(row.get("difficult", "0")).strip() in ("1", "true", "True"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"line {lineno}: bad ground-truth row: {exc}") from None
    return out


# --- deterministic split ------------------------------------------------------


def _splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 generator; returns (new_state, output)."""
    mask = (1 << 64) - 1
    state = (state + 0x9E3779B97F4A7C15) & mask
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z = z ^ (z >> 31)
    return state, z


def seeded_split(ids: Sequence, fractions: tuple[float, float], seed: int) -> tuple[list, list]:
    """Deterministically shuffle and split ``ids`` into two parts.

    The shuffle is a Fisher-Yates pass driven by splitmix64 (state seeded
    with ``seed``; each step adds the golden-ratio constant
    0x9E3779B97F4A7C15 and mixes with the 30/27/31 xor-shift-multiply
    sequence; swap index is the output modulo the unshuffled prefix length),
    so partitions are identical on every platform. The first part receives
    ceil(n * fractions[0]) items, the second the remainder.
    """
    a, b = fractions
    if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    items = list(ids)
    n = len(items)
    state = seed & ((1 << 64) - 1)
    for i in range(n - 1, 0, -1):
        state, out = _splitmix64(state)
        j = out % (i + 1)
        items[i], items[j] = items[j], items[i]
    first_size = math.ceil(n * a - 1e-9)
    return items[:first_size], items[first_size:]


# --- synthetic scenes ---------------------------------------------------------

SMALL_OBJECT_MAX_SIDE = 32.0  # boxes under 32x32 px count as small

_PLACEMENT_RETRIES = 50


class PlacementError(RuntimeError):
    """Could not place the requested number of objects at the allowed overlap."""


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for a reproducible random scene.

    ``overlap`` caps the pairwise IoU allowed between ground-truth boxes
    during placement (1.0 disables the constraint). ``duplicates_per_gt`` is
    the mean number of jittered candidate detections emitted per ground
    truth; ``background_rate`` adds that many spurious candidates on average.
    """

    num_objects: int
    small_fraction: float = 0.0
    image_width: int = 640
    image_height: int = 640
    overlap: float = 1.0
    duplicates_per_gt: float = 1.0
    jitter: float = 0.1
    background_rate: float = 0.0
    num_classes: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_objects < 0:
            raise ValueError("num_objects must be >= 0")
        if not 0.0 <= self.small_fraction <= 1.0:
            raise ValueError("small_fraction must be in [0, 1]")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image size must be positive")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must be in [0, 1]")
        if self.duplicates_per_gt < 0 or self.background_rate < 0:
            raise ValueError("rates must be >= 0")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")


def profile_scene_spec(mean_objects: float, seed: int, **overrides) -> SyntheticSceneSpec:
    """Scene spec whose object count is a Poisson draw around ``mean_objects``.

    Lets scene corpora mimic dataset profiles with fractional per-image
    object averages while each individual spec stays exact and reproducible.
    """
    count = int(np.random.default_rng(seed).poisson(mean_objects))
    return SyntheticSceneSpec(num_objects=count, seed=seed, **overrides)


def _draw_box(rng: np.random.Generator, spec: SyntheticSceneSpec, small: bool) -> Box:
    if small:
        w = rng.uniform(4.0, SMALL_OBJECT_MAX_SIDE - 1.0)
        h = rng.uniform(4.0, SMALL_OBJECT_MAX_SIDE - 1.0)
    else:
        hi_w = max(SMALL_OBJECT_MAX_SIDE * 1.25, min(spec.image_width / 3.0, 200.0))
        hi_h = max(SMALL_OBJECT_MAX_SIDE * 1.25, min(spec.image_height / 3.0, 200.0))
        w = rng.uniform(SMALL_OBJECT_MAX_SIDE, hi_w)
        h = rng.uniform(SMALL_OBJECT_MAX_SIDE, hi_h)
    w = min(w, spec.image_width)
    h = min(h, spec.image_height)
    x = rng.uniform(0.0, spec.image_width - w)
    y = rng.uniform(0.0, spec.image_height - h)
    return Box(x, y, x + w, y + h)


def generate_scene(spec: SyntheticSceneSpec) -> tuple[AnnotationRecord, list[Detection]]:
    """Seeded ground truth plus noisy candidate detections.

    Candidates are the ground-truth boxes jittered in place (jitter scales
    with the box size) with noisy scores, repeated a Poisson number of times
    per ground truth (at least one when duplicates are requested), plus
    optional unrelated background candidates.
    """
    rng = np.random.default_rng(spec.seed)
    image_id = f"scene-{spec.seed:08d}"

    instances: list[GroundTruthInstance] = []
    boxes: list[Box] = []
    for k in range(spec.num_objects):
        small = bool(rng.random() < spec.small_fraction)
        placed = None
        for _ in range(_PLACEMENT_RETRIES):
            candidate = _draw_box(rng, spec, small)
            if spec.overlap >= 1.0 or all(iou(candidate, b) <= spec.overlap for b in boxes):
                placed = candidate
                break
        if placed is None:
            raise PlacementError(
                f"placed {k} of {spec.num_objects} objects at overlap cap "
                f"{spec.overlap}; scene too dense"
            )
        boxes.append(placed)
        instances.append(GroundTruthInstance(
            image_id=image_id,
            class_id=int(rng.integers(0, spec.num_classes)),
            box=placed,
        ))

    detections: list[Detection] = []
    for inst in instances:
        count = 0
        if spec.duplicates_per_gt > 0:
            count = max(1, int(rng.poisson(spec.duplicates_per_gt)))
        for dup in range(count):
            detections.append(_jittered_detection(rng, inst, spec, primary=dup == 0))
    n_background = int(rng.poisson(spec.background_rate)) if spec.background_rate > 0 else 0
    for _ in range(n_background):
        small = bool(rng.random() < spec.small_fraction)
        detections.append(Detection(
            box=_draw_box(rng, spec, small),
            class_id=int(rng.integers(0, spec.num_classes)),
            score=float(rng.uniform(0.05, 0.6)),
        ))
    rec = AnnotationRecord(image_id=image_id, image_width=spec.image_width,
                           image_height=spec.image_height, instances=instances)
    return rec, detections


def _jittered_detection(
    rng: np.random.Generator,
    inst: GroundTruthInstance,
    spec: SyntheticSceneSpec,
    *,
    primary: bool,
) -> Detection:
    b = inst.box
    sx = spec.jitter * max(b.width, 1.0)
    sy = spec.jitter * max(b.height, 1.0)
    if primary:
        sx *= 0.25
        sy *= 0.25
    shifts = rng.normal(0.0, 1.0, size=4)
    jittered = Box(
        b.x_min + shifts[0] * sx,
        b.y_min + shifts[1] * sy,
        max(b.x_max + shifts[2] * sx, b.x_min + shifts[0] * sx + 1e-3),
        max(b.y_max + shifts[3] * sy, b.y_min + shifts[1] * sy + 1e-3),
    )
    jittered = clamp_box(jittered, spec.image_width, spec.image_height)
    score = rng.uniform(0.55, 0.99) if primary else rng.uniform(0.05, 0.9)
    return Detection(box=jittered, class_id=inst.class_id, score=float(score))
