import math

import numpy as np
import pytest

from detbench.evaluation import (
    DEFAULT_IOU_THRESHOLDS,
    DetLabel,
    GroundTruthInstance,
    ModelRecord,
    ap_by_class,
    average_precision,
    confusion_matrix,
    evaluate,
    f1_from_pr,
    load_model_records,
    map_range,
    match_detections,
    pareto_csv,
    pareto_frontier,
    precision_recall_f1,
)
from detbench.geometry import Box, iou
from detbench.postproc import Detection, sort_key

from conftest import random_box, random_detections


def _gt(image_id, class_id, box, difficult=False):
    return GroundTruthInstance(image_id=image_id, class_id=class_id, box=box, difficult=difficult)


class TestMatchDetections:
    def test_exact_hit(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9)]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.TP]
        assert result.gt_matched == [True]

    def test_single_match_rule(self):
        gts = [_gt("img", 0, Box(0, 0, 10, 10))]
        dets = {"img": [
            Detection(Box(0, 0, 10, 9), 0, 0.9),
            Detection(Box(0, 0, 9, 10), 0, 0.8),
        ]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.TP, DetLabel.FP]

    def test_lower_scored_det_matches_remaining_gt(self):
        gts = [_gt("img", 0, Box(0, 0, 10, 10)), _gt("img", 0, Box(20, 0, 30, 10))]
        dets = {"img": [
            Detection(Box(0, 0, 10, 10), 0, 0.9),
            Detection(Box(20, 0, 30, 10), 0, 0.5),
        ]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.TP, DetLabel.TP]

    def test_wrong_class_is_fp(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 1, 0.9)]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.FP]

    def test_wrong_image_is_fp(self):
        gts = [_gt("other", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9)]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.FP]

    def test_difficult_gt_ignored(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1), difficult=True)]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9)]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.IGNORED]
        assert result.num_gt.get(0, 0) == 0

    def test_difficult_gts_can_absorb_many(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1), difficult=True)]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, s) for s in (0.9, 0.8)]}
        result = match_detections(dets, gts, 0.5)
        assert result.labels["img"] == [DetLabel.IGNORED, DetLabel.IGNORED]

    def test_difficult_flag_can_be_disabled(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1), difficult=True)]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9)]}
        result = match_detections(dets, gts, 0.5, ignore_difficult=False)
        assert result.labels["img"] == [DetLabel.TP]
        assert result.num_gt == {0: 1}


def _oracle_match_one_image(dets, gts, iou_thr):
    """Literal score-ordered greedy matcher, written independently of the
    library implementation: per detection, take the strictly-best-IoU
    unmatched non-difficult ground truth of the same class (first index wins
    ties); detections whose only qualifying overlap is difficult are ignored.
    """
    taken = [False] * len(gts)
    labels = [None] * len(dets)
    for k in sorted(range(len(dets)), key=lambda i: sort_key(dets[i])):
        det = dets[k]
        best = None
        best_iou = 0.0
        saw_difficult = False
        for j, gt in enumerate(gts):
            if gt.class_id != det.class_id:
                continue
            overlap = iou(det.box, gt.box)
            if overlap < iou_thr:
                continue
            if gt.difficult:
                saw_difficult = True
                continue
            if taken[j]:
                continue
            if overlap > best_iou:
                best, best_iou = j, overlap
        if best is not None:
            taken[best] = True
            labels[k] = "tp"
        elif saw_difficult:
            labels[k] = "ignored"
        else:
            labels[k] = "fp"
    return labels


class TestMatchOracle:
    def test_random_scenes_match_reference(self, rng):
        for scene in range(300):
            n_dets, n_gts = int(rng.integers(0, 6)), int(rng.integers(0, 4))
            dets = random_detections(rng, n_dets, num_classes=2, quantize_scores=True)
            gts = [_gt("img", int(rng.integers(0, 2)), random_box(rng),
                       difficult=bool(rng.random() < 0.2)) for _ in range(n_gts)]
            thr = float(rng.choice([0.1, 0.3, 0.5]))
            result = match_detections({"img": dets}, gts, thr)
            expected = _oracle_match_one_image(dets, gts, thr)
            assert [lab.value for lab in result.labels["img"]] == expected


class TestPrecisionRecallF1:
    def test_paper_style_rows(self):
        assert f1_from_pr(0.785, 0.667) == pytest.approx(0.721, abs=1e-3)
        assert f1_from_pr(0.846, 0.733) == pytest.approx(0.785, abs=1e-3)

    def test_counts(self):
        p, r, f1 = precision_recall_f1(8, 2, 8)
        assert p == pytest.approx(0.8)
        assert r == pytest.approx(0.5)
        assert f1 == pytest.approx(2 * 0.8 * 0.5 / 1.3)

    def test_empty_convention(self):
        assert precision_recall_f1(0, 0, 0) == (0.0, 0.0, 0.0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            precision_recall_f1(-1, 0, 0)


def _oracle_ap(scored, num_gt, levels=101):
    """Brute-force interpolated AP: for every distinct score threshold count
    TP/FP above it, then average max-precision-at-recall over the grid."""
    if num_gt == 0:
        return None
    if not scored:
        return 0.0
    points = []
    for thr in sorted({s for s, _ in scored}):
        kept = [(s, t) for s, t in scored if s >= thr]
        tp = sum(1 for _, t in kept if t)
        fp = len(kept) - tp
        points.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(levels):
        level = round(i / (levels - 1), 2) if levels == 101 else round(i / (levels - 1), 1)
        candidates = [p for r, p in points if r >= level]
        total += max(candidates) if candidates else 0.0
    return total / levels


class TestAveragePrecision:
    def test_perfect(self):
        scored = [(0.9, True), (0.8, True)]
        assert average_precision(scored, 2) == pytest.approx(1.0, abs=1e-12)

    def test_all_misses(self):
        scored = [(0.9, False), (0.8, False)]
        assert average_precision(scored, 2) == 0.0

    def test_three_detection_toy_case(self):
        scored = [(0.9, True), (0.8, False), (0.7, True)]
        assert average_precision(scored, 2) == pytest.approx(_oracle_ap(scored, 2), abs=1e-12)

    def test_no_ground_truth_is_undefined(self):
        assert average_precision([(0.9, False)], 0) is None

    def test_matches_oracle_on_random_inputs(self, rng):
        for _ in range(300):
            n = int(rng.integers(0, 12))
            scored = [(round(float(rng.uniform(0.05, 1.0)), 1), bool(rng.random() < 0.5))
                      for _ in range(n)]
            num_gt = int(rng.integers(1, 6))
            got = average_precision(scored, num_gt)
            assert got == pytest.approx(_oracle_ap(scored, num_gt), abs=1e-12)

    def test_tie_order_invariance(self, rng):
        scored = [(0.5, True), (0.5, False), (0.5, True), (0.3, False), (0.3, True)]
        base = average_precision(scored, 4)
        for _ in range(10):
            shuffled = list(scored)
            rng.shuffle(shuffled)
            assert average_precision(shuffled, 4) == pytest.approx(base, abs=1e-12)

    def test_11_point_mode(self):
        scored = [(0.9, True), (0.8, False), (0.7, True)]
        ap11 = average_precision(scored, 2, interpolation="11point")
        assert ap11 == pytest.approx(_oracle_ap(scored, 2, levels=11), abs=1e-12)

    def test_unknown_interpolation(self):
        with pytest.raises(ValueError):
            average_precision([(0.5, True)], 1, interpolation="trapezoid")


def _scene(rng, n_images=3, dets_per_image=5, gts_per_image=3, num_classes=3):
    dets, gts = {}, []
    for i in range(n_images):
        image_id = f"img{i}"
        dets[image_id] = random_detections(rng, int(rng.integers(0, dets_per_image + 1)),
                                           num_classes=num_classes, quantize_scores=True)
        for _ in range(int(rng.integers(0, gts_per_image + 1))):
            gts.append(_gt(image_id, int(rng.integers(0, num_classes)), random_box(rng)))
    return dets, gts


class TestMapRange:
    def test_perfect_detections(self, rng):
        gts, dets = [], {}
        for i in range(4):
            image_id = f"img{i}"
            boxes = [random_box(rng) for _ in range(3)]
            gts.extend(_gt(image_id, k % 2, b) for k, b in enumerate(boxes))
            dets[image_id] = [Detection(b, k % 2, 0.9) for k, b in enumerate(boxes)]
        assert map_range(dets, gts) == pytest.approx(1.0, abs=1e-12)

    def test_single_threshold_equals_map50(self, rng):
        dets, gts = _scene(rng)
        only_50 = map_range(dets, gts, thresholds=[0.5])
        aps = [a for a in ap_by_class(dets, gts, 0.5).values() if a is not None]
        assert only_50 == pytest.approx(float(np.mean(aps)) if aps else 0.0, abs=1e-12)

    def test_loose_boxes_drop_at_strict_thresholds(self):
        gt_box = Box(0, 0, 10, 10)
        det_box = Box(0, 0, 10, 5.5)  # IoU 0.55
        gts = [_gt("img", 0, gt_box)]
        dets = {"img": [Detection(det_box, 0, 0.9)]}
        assert map_range(dets, gts, thresholds=[0.5]) == pytest.approx(1.0)
        assert map_range(dets, gts, thresholds=[0.6]) == 0.0
        full = map_range(dets, gts)
        assert 0.05 <= full <= 0.25

    def test_ap_monotone_in_threshold(self, rng):
        for _ in range(30):
            dets, gts = _scene(rng)
            values = [map_range(dets, gts, thresholds=[t]) for t in DEFAULT_IOU_THRESHOLDS]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_image_order_invariance(self, rng):
        dets, gts = _scene(rng, n_images=4)
        reversed_dets = dict(reversed(list(dets.items())))
        assert map_range(dets, gts) == pytest.approx(map_range(reversed_dets, gts), abs=1e-12)

    def test_empty_thresholds_rejected(self, rng):
        with pytest.raises(ValueError):
            map_range({}, [], thresholds=[])


class TestConfusionMatrix:
    def test_perfect_single_class(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9)]}
        mat = confusion_matrix(dets, gts, num_classes=2)
        assert mat[0, 0] == 1
        assert mat.sum() == 1

    def test_wrong_class_off_diagonal(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 1, 0.9)]}
        mat = confusion_matrix(dets, gts, num_classes=2)
        assert mat[0, 1] == 1

    def test_spurious_detection_hits_background_row(self):
        dets = {"img": [Detection(Box(0, 0, 1, 1), 1, 0.9)]}
        mat = confusion_matrix(dets, [], num_classes=2)
        assert mat[2, 1] == 1

    def test_missed_gt_hits_background_column(self):
        gts = [_gt("img", 1, Box(0, 0, 1, 1))]
        mat = confusion_matrix({}, gts, num_classes=2)
        assert mat[1, 2] == 1

    def test_confidence_threshold_applies(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.1)]}
        mat = confusion_matrix(dets, gts, conf_thr=0.25, num_classes=1)
        assert mat[0, 1] == 1  # detection dropped, gt counted as missed


class TestEvaluate:
    def test_perfect_scene(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1)), _gt("img", 1, Box(5, 5, 9, 9))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9),
                        Detection(Box(5, 5, 9, 9), 1, 0.8)]}
        report = evaluate(dets, gts)
        assert report.aggregate.precision == 1.0
        assert report.aggregate.recall == 1.0
        assert report.aggregate.map50 == pytest.approx(1.0)
        assert report.aggregate.map50_95 == pytest.approx(1.0)
        assert report.confusion.shape == (3, 3)
        assert report.confusion[0, 0] == 1 and report.confusion[1, 1] == 1

    def test_report_serialization(self, rng):
        dets, gts = _scene(rng)
        report = evaluate(dets, gts)
        text = report.to_json()
        assert '"aggregate"' in text
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0].startswith("class_id")
        assert csv_text.splitlines()[-1].startswith("aggregate")

    def test_micro_differs_from_macro_on_skew(self):
        gts = [_gt("img", 0, Box(0, 0, 10, 10)),
               _gt("img", 0, Box(20, 20, 30, 30)),
               _gt("img", 1, Box(40, 40, 50, 50))]
        dets = {"img": [Detection(Box(0, 0, 10, 10), 0, 0.9),
                        Detection(Box(40, 40, 50, 50), 1, 0.9),
                        Detection(Box(60, 60, 70, 70), 1, 0.8)]}
        macro = evaluate(dets, gts, aggregation="macro").aggregate
        micro = evaluate(dets, gts, aggregation="micro").aggregate
        assert macro.recall == pytest.approx((0.5 + 1.0) / 2)
        assert micro.recall == pytest.approx(2 / 3)

    def test_zero_gt_class_excluded_from_aggregate(self):
        gts = [_gt("img", 0, Box(0, 0, 1, 1))]
        dets = {"img": [Detection(Box(0, 0, 1, 1), 0, 0.9),
                        Detection(Box(5, 5, 6, 6), 7, 0.9)]}
        report = evaluate(dets, gts)
        assert report.aggregate.precision == 1.0
        assert 7 in report.per_class
        assert report.per_class[7].ap50 is None

    def test_unknown_aggregation(self):
        with pytest.raises(ValueError):
            evaluate({}, [], aggregation="harmonic")


class TestPareto:
    def test_single_model(self):
        m = ModelRecord("only", 0.5, {"gflops": 10.0})
        assert pareto_frontier([m], "gflops") == {"only"}

    def test_dominated_excluded(self):
        a = ModelRecord("a", 0.5, {"gflops": 10.0})
        b = ModelRecord("b", 0.6, {"gflops": 5.0})
        assert pareto_frontier([a, b], "gflops") == {"b"}

    def test_exact_ties_keep_both(self):
        a = ModelRecord("a", 0.5, {"gflops": 10.0})
        b = ModelRecord("b", 0.5, {"gflops": 10.0})
        assert pareto_frontier([a, b], "gflops") == {"a", "b"}

    def test_monotone_transform_invariance(self, rng):
        for _ in range(50):
            models = [ModelRecord(f"m{i}", float(rng.uniform(0, 1)),
                                  {"gflops": float(rng.uniform(0.5, 50))})
                      for i in range(8)]
            base = pareto_frontier(models, "gflops")
            warped = [ModelRecord(m.name, math.exp(m.accuracy),
                                  {"gflops": math.log1p(m.cost("gflops"))})
                      for m in models]
            assert pareto_frontier(warped, "gflops") == base

    def test_frontier_nonempty_and_covers(self, rng):
        for _ in range(50):
            models = [ModelRecord(f"m{i}", float(rng.uniform(0, 1)),
                                  {"gflops": float(rng.uniform(0.5, 50))})
                      for i in range(6)]
            frontier = pareto_frontier(models, "gflops")
            assert frontier
            by_name = {m.name: m for m in models}
            for m in models:
                if m.name in frontier:
                    continue
                assert any(
                    f.accuracy >= m.accuracy and f.cost("gflops") <= m.cost("gflops")
                    and (f.accuracy > m.accuracy or f.cost("gflops") < m.cost("gflops"))
                    for f in (by_name[n] for n in frontier)
                )

    def test_missing_cost_rejected(self):
        a = ModelRecord("a", 0.5, {"gflops": 10.0})
        with pytest.raises(ValueError):
            pareto_frontier([a], "gpu_latency_ms")

    def test_record_validation(self):
        with pytest.raises(ValueError):
            ModelRecord("a", 0.5, {})
        with pytest.raises(ValueError):
            ModelRecord("a", 0.5, {"gflops": 0.0})

    def test_csv_output(self):
        a = ModelRecord("a", 0.5, {"gflops": 10.0})
        b = ModelRecord("b", 0.6, {"gflops": 5.0})
        text = pareto_csv([a, b], "gflops")
        lines = text.splitlines()
        assert lines[0] == "name,accuracy,gflops,on_frontier"
        assert lines[1] == "a,0.5,10,false"
        assert lines[2] == "b,0.6,5,true"


class TestLoadModelRecords:
    def test_packaged_table(self):
        import detbench

        records = load_model_records(detbench.paper_tables_path())
        assert len(records) == 10
        names = {m.name for m in records}
        assert {"v8n", "v26x"} <= names
        assert records[0].costs["gpu_latency_ms"] == pytest.approx(6.65)

    def test_missing_accuracy_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("name,gflops\nm1,5\n")
        with pytest.raises(ValueError):
            load_model_records(path)
