import numpy as np
import pytest

from detbench.geometry import Box
from detbench.postproc import Detection


def random_box(rng: np.random.Generator, extent: float = 100.0, min_side: float = 0.5) -> Box:
    x = rng.uniform(0.0, extent)
    y = rng.uniform(0.0, extent)
    w = rng.uniform(min_side, extent / 3.0)
    h = rng.uniform(min_side, extent / 3.0)
    return Box(x, y, x + w, y + h)


def random_detections(rng: np.random.Generator, n: int, num_classes: int = 3,
                      quantize_scores: bool = False) -> list[Detection]:
    dets = []
    for _ in range(n):
        score = float(rng.uniform(0.01, 1.0))
        if quantize_scores:
            score = round(score, 1)
        dets.append(Detection(
            box=random_box(rng),
            class_id=int(rng.integers(0, num_classes)),
            score=min(max(score, 0.0), 1.0),
        ))
    return dets


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
