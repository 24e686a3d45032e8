"""Latency harness for the two post-processing pipelines.

Times only the post-processing call on seeded dense scenes, after a short
warmup, using the monotonic clock. Scene content is fully determined by the
seed; timing numbers of course are not.
"""

from __future__ import annotations

import csv
import io
import json
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .data_io import SyntheticSceneSpec, generate_scene
from .postproc import Detection, PipelineConfig, run_pipeline

MIN_REPETITIONS = 30
DEFAULT_WARMUP = 5

# Dense-scene recipe: ~10 candidates per object with heavy overlap so
# suppression dominates the NMS path.
BENCH_DUPLICATES_PER_GT = 10.0

BENCH_CSV_FIELDS = ("mode", "candidate_count", "repetitions",
                    "median_ns", "p95_ns", "max_ns", "stddev_ns")


@dataclass(frozen=True)
class LatencyReport:
    """Latency summary of one (mode, scene size) cell."""

    mode: str
    candidate_count: int
    repetitions: int
    median_ns: float
    p95_ns: float
    max_ns: int
    stddev_ns: float

    def __post_init__(self) -> None:
        if self.repetitions < MIN_REPETITIONS:
            raise ValueError(f"need at least {MIN_REPETITIONS} repetitions")
        if not self.median_ns <= self.p95_ns <= self.max_ns:
            raise ValueError("latency summary out of order: median <= p95 <= max required")


def dense_scene(count: int, seed: int) -> list[Detection]:
    """Seeded scene with roughly ``count`` heavily overlapping candidates."""
    spec = SyntheticSceneSpec(
        num_objects=max(1, round(count / BENCH_DUPLICATES_PER_GT)),
        small_fraction=0.2,
        overlap=1.0,
        duplicates_per_gt=BENCH_DUPLICATES_PER_GT,
        jitter=0.04,  # tight jitter keeps duplicates above typical IoU thresholds
        num_classes=3,
        seed=seed,
    )
    _, dets = generate_scene(spec)
    return dets


def time_pipeline(dets: Sequence[Detection], cfg: PipelineConfig, reps: int,
                  warmup: int = DEFAULT_WARMUP) -> np.ndarray:
    """Per-repetition wall times (ns) of the bare post-processing call."""
    for _ in range(warmup):
        run_pipeline(dets, cfg)
    times = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        start = time.perf_counter_ns()
        run_pipeline(dets, cfg)
        times[r] = time.perf_counter_ns() - start
    return times


def bench_postproc(
    counts: Sequence[int],
    cfg: PipelineConfig,
    reps: int = 100,
    seed: int = 0,
    *,
    warmup: int = DEFAULT_WARMUP,
) -> list[LatencyReport]:
    """One latency report per candidate count for the configured mode.

    Counts must be ascending; each count gets its own seeded scene (derived
    from ``seed`` and the count) shared by every repetition.
    """
    if list(counts) != sorted(counts):
        raise ValueError("counts must be ascending")
    if reps < MIN_REPETITIONS:
        raise ValueError(f"reps must be >= {MIN_REPETITIONS}")

    reports = []
    for count in counts:
        if count < 1:
            raise ValueError("counts must be positive")
        dets = dense_scene(count, seed=seed * 1_000_003 + count)
        times = time_pipeline(dets, cfg, reps, warmup)
        reports.append(LatencyReport(
            mode=cfg.mode.value,
            candidate_count=len(dets),
            repetitions=reps,
            median_ns=float(np.median(times)),
            p95_ns=float(np.percentile(times, 95)),
            max_ns=int(times.max()),
            stddev_ns=float(times.std()),
        ))
    return reports


def reports_to_csv(reports: Sequence[LatencyReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCH_CSV_FIELDS)
    for r in reports:
        writer.writerow([r.mode, r.candidate_count, r.repetitions,
                         f"{r.median_ns:.1f}", f"{r.p95_ns:.1f}", r.max_ns,
                         f"{r.stddev_ns:.1f}"])
    return buf.getvalue()


def reports_to_json(reports: Sequence[LatencyReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2) + "\n"
