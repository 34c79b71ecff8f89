import numpy as np
import pytest

from reldet.boxes import Box
from reldet.metrics import (
    DetGroundTruth,
    DetPrediction,
    EvalConfig,
    RelGroundTruth,
    RelPrediction,
    average_precision,
    detection_map,
    mean_recall_at_k,
    relationship_map,
)

T1 = ("red circle", "above", "blue square")
T2 = ("red circle", "left of", "blue square")
B1 = Box(0.3, 0.3, 0.2, 0.2)
B2 = Box(0.7, 0.7, 0.2, 0.2)
B_OFF = Box(0.32, 0.32, 0.2, 0.2)  # IoU with B1 well above 0.5
B_FAR = Box(0.8, 0.2, 0.1, 0.1)


def rel_pred(triplet=T1, sub=B1, obj=B2, score=0.9):
    return RelPrediction(sub, obj, triplet, score)


def rel_gt(triplet=T1, sub=B1, obj=B2):
    return RelGroundTruth(sub, obj, triplet)


class TestAveragePrecision:
    def test_single_perfect(self):
        ap = average_precision(np.array([0.9]), np.array([True]), 1)
        assert ap == 1.0

    def test_duplicate_after_correct_keeps_ap_one(self):
        # one gt; correct at 0.9, duplicate at 0.8 is a false positive below it
        ap = average_precision(np.array([0.9, 0.8]), np.array([True, False]), 1)
        assert ap == 1.0

    def test_false_positive_above_halves_leading_precision(self):
        ap = average_precision(np.array([0.9, 0.8]), np.array([False, True]), 1)
        assert ap == pytest.approx(0.5)

    def test_no_predictions(self):
        assert average_precision(np.array([]), np.array([], dtype=bool), 3) == 0.0

    def test_adding_low_false_positive_never_increases(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 8))
            scores = rng.random(n)
            tp = rng.random(n) < 0.5
            base = average_precision(scores, tp, max(1, int(tp.sum())))
            scores2 = np.append(scores, scores.min() - 0.1)
            tp2 = np.append(tp, False)
            assert average_precision(scores2, tp2, max(1, int(tp.sum()))) <= base + 1e-12


class TestRelationshipMap:
    def test_perfect_single(self):
        splits, per_class = relationship_map([[rel_pred()]], [[rel_gt()]])
        assert splits["full"] == 1.0
        assert per_class[T1] == 1.0

    def test_duplicate_prediction_is_fp_but_ap_stays_one(self):
        preds = [[rel_pred(score=0.9), rel_pred(sub=B_OFF, score=0.8)]]
        splits, _ = relationship_map(preds, [[rel_gt()]])
        assert splits["full"] == 1.0

    def test_low_iou_is_zero(self):
        # IoU 0.4-ish at threshold 0.5 never matches
        sub_off = Box(0.41, 0.3, 0.2, 0.2)  # IoU vs B1 = .09/.31 ~ 0.29
        splits, _ = relationship_map([[rel_pred(sub=sub_off)]], [[rel_gt()]])
        assert splits["full"] == 0.0

    def test_class_must_match_exactly(self):
        splits, _ = relationship_map([[rel_pred(triplet=T2)]], [[rel_gt(triplet=T1)]])
        assert splits["full"] == 0.0

    def test_both_boxes_must_pass_iou(self):
        splits, _ = relationship_map([[rel_pred(obj=B_FAR)]], [[rel_gt()]])
        assert splits["full"] == 0.0

    def test_rare_split_by_training_counts(self):
        preds = [[rel_pred(), rel_pred(triplet=T2, score=0.8)]]
        gts = [[rel_gt(), rel_gt(triplet=T2)]]
        counts = {T1: 100, T2: 3}
        cfg = EvalConfig(rare_cutoff=10)
        splits, _ = relationship_map(preds, gts, cfg, training_counts=counts)
        assert splits["full"] == 1.0
        assert splits["rare"] == 1.0  # only T2, matched
        assert splits["nonrare"] == 1.0

    def test_unknown_class_in_split_errors(self):
        with pytest.raises(ValueError, match="unknown classes"):
            relationship_map(
                [[rel_pred()]], [[rel_gt()]], splits={"custom": {("x", "y", "z")}}
            )

    def test_score_storage_order_invariance(self):
        preds = [[rel_pred(score=0.9), rel_pred(triplet=T2, score=0.5), rel_pred(sub=B_OFF, score=0.7)]]
        gts = [[rel_gt(), rel_gt(triplet=T2)]]
        a, _ = relationship_map(preds, gts)
        shuffled = [[preds[0][2], preds[0][0], preds[0][1]]]
        b, _ = relationship_map(shuffled, gts)
        assert a == b


class TestMeanRecall:
    def test_all_matched(self):
        preds = [[rel_pred()]]
        gts = [[rel_gt()]]
        assert mean_recall_at_k(preds, gts, 50) == 1.0

    def test_k_cuts_off_correct_prediction(self):
        # the only correct prediction ranks below K distractors
        distractors = [rel_pred(triplet=T2, sub=B_FAR, obj=B_FAR, score=0.9 - i * 0.01) for i in range(3)]
        correct = rel_pred(score=0.1)
        preds = [distractors + [correct]]
        gts = [[rel_gt()]]
        # predicate classes: 'above' (1 gt). With K=3 the correct one is cut.
        assert mean_recall_at_k(preds, gts, 3) == 0.0
        assert mean_recall_at_k(preds, gts, 10) == 1.0

    def test_two_class_hand_count(self):
        # class A ('above'): 1 of 2 gt matched; class B ('left of'): 1 of 1
        gts = [[
            rel_gt(),
            rel_gt(sub=Box(0.1, 0.1, 0.1, 0.1), obj=Box(0.9, 0.9, 0.1, 0.1)),
            rel_gt(triplet=T2),
        ]]
        preds = [[rel_pred(score=0.9), rel_pred(triplet=T2, score=0.8)]]
        assert mean_recall_at_k(preds, gts, 10) == pytest.approx(0.75)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(1)
        gts = [[rel_gt(), rel_gt(triplet=T2)]]
        preds = [[
            rel_pred(score=float(rng.random()), sub=B1 if rng.random() < 0.5 else B_FAR)
            for _ in range(12)
        ]]
        values = [mean_recall_at_k(preds, gts, k) for k in (1, 2, 5, 10, 50, 100)]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


class TestDetectionMap:
    def test_perfect(self):
        gts = [[DetGroundTruth(B1, "cat"), DetGroundTruth(B2, "dog")]]
        preds = [[DetPrediction(B1, "cat", 0.9), DetPrediction(B2, "dog", 0.8)]]
        assert detection_map(preds, gts)[0] == 1.0

    def test_empty_predictions(self):
        gts = [[DetGroundTruth(B1, "cat")]]
        assert detection_map([[]], gts)[0] == 0.0

    def test_three_prediction_hand_computed(self):
        # class 'cat': 2 gts; preds: TP@0.9, FP@0.8, TP@0.7
        # PR points: (0.5, 1), (0.5, 1/2), (1.0, 2/3) -> AP = 0.5*1 + 0.5*(2/3)
        gts = [[DetGroundTruth(B1, "cat"), DetGroundTruth(B2, "cat")]]
        preds = [[
            DetPrediction(B1, "cat", 0.9),
            DetPrediction(B_FAR, "cat", 0.8),
            DetPrediction(B2, "cat", 0.7),
        ]]
        mAP, per_class = detection_map(preds, gts)
        assert per_class["cat"] == pytest.approx(0.5 + 0.5 * (2.0 / 3.0))

    def test_gt_matched_once(self):
        gts = [[DetGroundTruth(B1, "cat")]]
        preds = [[DetPrediction(B1, "cat", 0.9), DetPrediction(B_OFF, "cat", 0.8)]]
        mAP, _ = detection_map(preds, gts)
        assert mAP == 1.0  # duplicate is FP below the TP

    def test_map_bounded(self):
        rng = np.random.default_rng(2)
        gts, preds = [], []
        for _ in range(4):
            gts.append([DetGroundTruth(B1, "cat")])
            preds.append(
                [DetPrediction(B1 if rng.random() < 0.5 else B_FAR, "cat", float(rng.random()))
                 for _ in range(5)]
            )
        mAP, _ = detection_map(preds, gts)
        assert 0.0 <= mAP <= 1.0
