import math

import numpy as np
import pytest

from detbench.losses import (
    ClassificationBatch,
    DflDistribution,
    DirectHead,
    DistributionalHead,
    LossWeights,
    ProgLossSchedule,
    bce_loss,
    composite_loss_fixed,
    composite_loss_scheduled,
    decode_head,
    dfl_decode,
    dfl_loss,
    progloss_lambda,
)


class TestBce:
    def test_perfect_prediction(self):
        batch = ClassificationBatch(targets=[[1.0]], predictions=[[1.0 - 1e-7]], num_positives=1)
        assert bce_loss(batch) == pytest.approx(1e-7, abs=1e-12)

    def test_uniform_two_class(self):
        batch = ClassificationBatch(targets=[[1.0, 0.0]], predictions=[[0.5, 0.5]], num_positives=1)
        assert bce_loss(batch) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_confident_wrong(self):
        batch = ClassificationBatch(targets=[[0.0]], predictions=[[0.9]], num_positives=1)
        assert bce_loss(batch) == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_clamping_keeps_loss_finite(self):
        batch = ClassificationBatch(targets=[[1.0]], predictions=[[0.0]], num_positives=1)
        assert math.isfinite(bce_loss(batch))

    def test_normalizer(self):
        one = ClassificationBatch(targets=[[0.0]], predictions=[[0.5]], num_positives=1)
        four = ClassificationBatch(targets=[[0.0]], predictions=[[0.5]], num_positives=4)
        assert bce_loss(four) == pytest.approx(bce_loss(one) / 4)

    def test_nonnegative_random(self, rng):
        for _ in range(50):
            y = (rng.random((4, 6)) < 0.3).astype(float)
            p = rng.uniform(0.001, 0.999, size=(4, 6))
            batch = ClassificationBatch(targets=y, predictions=p, num_positives=3)
            assert bce_loss(batch) >= 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ClassificationBatch(targets=[[1.0, 0.0]], predictions=[[0.5]], num_positives=1)

    def test_non_binary_targets_rejected(self):
        with pytest.raises(ValueError):
            ClassificationBatch(targets=[[0.5]], predictions=[[0.5]], num_positives=1)

    def test_zero_positives_rejected(self):
        with pytest.raises(ValueError):
            ClassificationBatch(targets=[[1.0]], predictions=[[0.5]], num_positives=0)


class TestDfl:
    def test_uniform_17_bins_decodes_to_center(self):
        d = DflDistribution(logits=[0.0] * 17)
        assert dfl_decode(d) == pytest.approx(8.0, abs=1e-12)

    def test_two_bins_uniform(self):
        assert dfl_decode(DflDistribution(logits=[0.0, 0.0])) == pytest.approx(0.5, abs=1e-15)

    def test_saturated_bin(self):
        logits = [0.0] * 17
        logits[3] = 50.0
        assert dfl_decode(DflDistribution(logits=logits)) == pytest.approx(3.0, abs=1e-9)

    def test_decode_within_range(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 20))
            d = DflDistribution(logits=rng.normal(0, 5, size=n + 1))
            assert 0.0 <= dfl_decode(d) <= n

    def test_shift_invariance(self, rng):
        for _ in range(100):
            logits = rng.normal(0, 3, size=9)
            shift = rng.uniform(-100, 100)
            a = dfl_decode(DflDistribution(logits=logits))
            b = dfl_decode(DflDistribution(logits=logits + shift))
            assert a == pytest.approx(b, abs=1e-9)

    def test_loss_perfect_mass(self):
        logits = [0.0] * 17
        logits[3] = 50.0
        assert dfl_loss(DflDistribution(logits=logits), 3.0) == pytest.approx(0.0, abs=1e-12)

    def test_loss_midpoint_two_bins(self):
        assert dfl_loss(DflDistribution(logits=[0.0, 0.0]), 0.5) == pytest.approx(math.log(2), abs=1e-12)

    def test_loss_uniform_17(self):
        d = DflDistribution(logits=[0.0] * 17)
        assert dfl_loss(d, 2.5) == pytest.approx(math.log(17), abs=1e-12)

    def test_loss_integer_target_single_bin(self):
        d = DflDistribution(logits=[1.0, 2.0, 0.5])
        p = np.exp([1.0, 2.0, 0.5])
        p /= p.sum()
        assert dfl_loss(d, 1.0) == pytest.approx(-math.log(p[1]), rel=1e-12)

    def test_loss_target_out_of_range(self):
        d = DflDistribution(logits=[0.0, 0.0])
        with pytest.raises(ValueError):
            dfl_loss(d, -0.1)
        with pytest.raises(ValueError):
            dfl_loss(d, 1.1)

    def test_loss_minimized_near_heaviest_bin(self, rng):
        # the loss is piecewise linear in the target, so a grid minimum must
        # land on the argmax-probability bin
        for _ in range(20):
            logits = rng.normal(0, 2, size=5)
            d = DflDistribution(logits=logits)
            grid = np.linspace(0.0, 4.0, 401)
            values = [dfl_loss(d, float(t)) for t in grid]
            t_best = grid[int(np.argmin(values))]
            assert t_best == pytest.approx(float(np.argmax(logits)), abs=1e-9)

    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            DflDistribution(logits=[0.0])
        with pytest.raises(ValueError):
            DflDistribution(logits=[0.0, math.inf])


class TestDecodeHead:
    def test_direct_pass_through(self):
        head = DirectHead(distances=(1.0, 2.0, 3.0, 4.0))
        assert decode_head(head) == (1.0, 2.0, 3.0, 4.0)

    def test_distributional_uniform(self):
        side = DflDistribution(logits=[0.0] * 17)
        head = DistributionalHead(sides=(side, side, side, side))
        assert decode_head(head) == pytest.approx((8.0, 8.0, 8.0, 8.0))

    def test_distributional_saturated(self):
        logits = [0.0] * 17
        logits[3] = 50.0
        side = DflDistribution(logits=logits)
        head = DistributionalHead(sides=(side, side, side, side))
        assert decode_head(head) == pytest.approx((3.0, 3.0, 3.0, 3.0), abs=1e-9)

    def test_rejects_other_types(self):
        with pytest.raises(TypeError):
            decode_head((1.0, 2.0, 3.0, 4.0))


class TestCompositeFixed:
    def test_zero(self):
        assert composite_loss_fixed(0, 0, 0, LossWeights()) == 0.0

    def test_default_weights(self):
        assert composite_loss_fixed(1, 1, 1, LossWeights()) == pytest.approx(9.5)

    def test_single_term(self):
        w = LossWeights(lambda_cls=1, lambda_box=1, lambda_dfl=1)
        assert composite_loss_fixed(2, 0, 0, w) == 2.0

    def test_negative_component_rejected(self):
        with pytest.raises(ValueError):
            composite_loss_fixed(-1, 0, 0, LossWeights())

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_cls=-0.1)
        with pytest.raises(ValueError):
            LossWeights(lambda_cls=0, lambda_box=0, lambda_dfl=0)


class TestProgLoss:
    def test_start_of_schedule(self):
        s = ProgLossSchedule(lambda_max=1.0, lambda_min=0.0, total_epochs=10)
        assert progloss_lambda(0, s) == pytest.approx(1.0, abs=1e-15)

    def test_end_of_schedule(self):
        s = ProgLossSchedule(lambda_max=0.7, lambda_min=0.1, total_epochs=10)
        assert progloss_lambda(10, s) == pytest.approx(0.1, abs=1e-12)

    def test_third_of_schedule(self):
        s = ProgLossSchedule(lambda_max=1.0, lambda_min=0.0, total_epochs=3)
        assert progloss_lambda(1, s) == pytest.approx(math.sqrt(3) / 2, abs=1e-12)

    def test_monotone_non_increasing(self):
        s = ProgLossSchedule(lambda_max=0.8, lambda_min=0.15, total_epochs=50)
        values = [progloss_lambda(t, s) for t in range(51)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_weight_stays_in_unit_interval(self):
        s = ProgLossSchedule(lambda_max=0.85, lambda_min=0.15, total_epochs=17)
        for t in range(18):
            assert 0.0 <= progloss_lambda(t, s) <= 1.0

    def test_epoch_out_of_range(self):
        s = ProgLossSchedule(lambda_max=0.5, lambda_min=0.1, total_epochs=5)
        with pytest.raises(ValueError):
            progloss_lambda(-1, s)
        with pytest.raises(ValueError):
            progloss_lambda(6, s)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            ProgLossSchedule(lambda_max=0.8, lambda_min=0.3, total_epochs=10)
        with pytest.raises(ValueError):
            ProgLossSchedule(lambda_max=0.5, lambda_min=0.1, total_epochs=0)
        with pytest.raises(ValueError):
            ProgLossSchedule(lambda_max=-0.1, lambda_min=0.1, total_epochs=10)


class TestCompositeScheduled:
    def test_end_returns_box_exactly(self):
        s = ProgLossSchedule(lambda_max=0.9, lambda_min=0.0, total_epochs=4)
        # cos(pi/2) is ~6e-17 in floats, hence the tight tolerance rather than ==
        assert composite_loss_scheduled(3.0, 7.0, 4, s) == pytest.approx(7.0, abs=1e-12)

    def test_start_returns_cls_exactly(self):
        s = ProgLossSchedule(lambda_max=1.0, lambda_min=0.0, total_epochs=4)
        assert composite_loss_scheduled(3.0, 7.0, 0, s) == 3.0

    def test_halfway(self):
        s = ProgLossSchedule(lambda_max=1.0, lambda_min=0.0, total_epochs=2)
        expected = math.cos(math.pi / 4) * 2.0 + (1 - math.cos(math.pi / 4)) * 4.0
        assert composite_loss_scheduled(2.0, 4.0, 1, s) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(2.585786437626905, abs=1e-12)

    def test_negative_component_rejected(self):
        s = ProgLossSchedule(lambda_max=0.5, lambda_min=0.1, total_epochs=5)
        with pytest.raises(ValueError):
            composite_loss_scheduled(-1.0, 0.0, 0, s)
