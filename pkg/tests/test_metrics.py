import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segattn import metrics
from segattn.errors import LabelError

from oracles import confusion_oracle


def cm_from(pred, truth, k=3):
    return metrics.ConfusionMatrix(k).accumulate(np.asarray(pred), np.asarray(truth))


class TestAccumulate:
    def test_perfect_prediction_fills_diagonal(self):
        cm = cm_from([0, 1, 2, 1], [0, 1, 2, 1])
        assert np.trace(cm.counts) == 4 and cm.total == 4

    def test_empty_input_unchanged(self):
        cm = metrics.ConfusionMatrix(3)
        cm.accumulate(np.array([], dtype=int), np.array([], dtype=int))
        assert cm.total == 0

    def test_split_equals_whole(self):
        rng = np.random.default_rng(60)
        pred = rng.integers(0, 4, 1000)
        truth = rng.integers(0, 4, 1000)
        whole = metrics.ConfusionMatrix(4).accumulate(pred, truth)
        split = metrics.ConfusionMatrix(4)
        split.accumulate(pred[:300], truth[:300])
        split.accumulate(pred[300:], truth[300:])
        assert np.array_equal(whole.counts, split.counts)

    def test_merge_matches_joint_accumulation(self):
        rng = np.random.default_rng(61)
        pred = rng.integers(0, 3, 100)
        truth = rng.integers(0, 3, 100)
        a = cm_from(pred[:50], truth[:50])
        b = cm_from(pred[50:], truth[50:])
        a.merge(b)
        assert np.array_equal(a.counts, cm_from(pred, truth).counts)

    def test_out_of_range_label(self):
        with pytest.raises(LabelError):
            cm_from([0, 3], [0, 0])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(62)
        pred = rng.integers(0, 5, (20, 20))
        truth = rng.integers(0, 5, (20, 20))
        cm = metrics.ConfusionMatrix(5).accumulate(pred, truth)
        assert np.array_equal(cm.counts, confusion_oracle(pred, truth, 5))


class TestScores:
    def test_perfect_scores(self):
        cm = cm_from([0, 1, 2], [0, 1, 2])
        for k in range(3):
            assert metrics.f1_score(cm, k) == (1.0, True)
            assert metrics.iou(cm, k) == (1.0, True)
        assert metrics.overall_accuracy(cm) == 1.0

    def test_hand_confusion_matrix(self):
        # class 1: TP=3, FP=1, FN=1 -> precision=recall=0.75
        cm = metrics.ConfusionMatrix(2)
        cm.counts[1, 1] = 3
        cm.counts[0, 1] = 1
        cm.counts[1, 0] = 1
        cm.counts[0, 0] = 5
        assert metrics.f1_score(cm, 1).value == pytest.approx(0.75)
        assert metrics.iou(cm, 1).value == pytest.approx(0.6)

    def test_absent_class_flagged(self):
        cm = cm_from([0, 0], [0, 0], k=3)
        value, defined = metrics.f1_score(cm, 2)
        assert value == 0.0 and not defined
        value, defined = metrics.iou(cm, 2)
        assert value == 0.0 and not defined

    def test_disjoint_prediction_zero_iou(self):
        cm = cm_from([1, 1], [2, 2], k=3)
        assert metrics.iou(cm, 2) == (0.0, True)
        assert metrics.iou(cm, 1) == (0.0, True)

    def test_constant_predictor_on_balanced_pair(self):
        cm = cm_from([0, 0, 0, 0], [0, 0, 1, 1], k=2)
        assert metrics.overall_accuracy(cm) == 0.5

    def test_oa_is_trace_over_total(self):
        rng = np.random.default_rng(63)
        pred = rng.integers(0, 4, 500)
        truth = rng.integers(0, 4, 500)
        cm = metrics.ConfusionMatrix(4).accumulate(pred, truth)
        oracle = confusion_oracle(pred, truth, 4)
        assert metrics.overall_accuracy(cm) == oracle.trace() / oracle.sum()

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            metrics.overall_accuracy(metrics.ConfusionMatrix(2))


class TestCrossMetricConsistency:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 31))
    def test_f1_equals_2iou_over_1_plus_iou(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.integers(0, 4, 200)
        truth = rng.integers(0, 4, 200)
        cm = metrics.ConfusionMatrix(4).accumulate(pred, truth)
        for k in range(4):
            f1 = metrics.f1_score(cm, k)
            jac = metrics.iou(cm, k)
            if f1.defined:
                assert abs(f1.value - 2 * jac.value / (1 + jac.value)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 31))
    def test_label_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.integers(0, 4, 300)
        truth = rng.integers(0, 4, 300)
        perm = rng.permutation(4)
        base = metrics.ConfusionMatrix(4).accumulate(pred, truth)
        relabeled = metrics.ConfusionMatrix(4).accumulate(perm[pred], perm[truth])
        assert metrics.overall_accuracy(base) == metrics.overall_accuracy(relabeled)
        for k in range(4):
            assert metrics.f1_score(base, k) == metrics.f1_score(relabeled, perm[k])
            assert metrics.iou(base, k) == metrics.iou(relabeled, perm[k])
        # all-class means are permutation invariant too
        base_iou = [metrics.iou(base, k).value for k in range(4)]
        rel_iou = [metrics.iou(relabeled, k).value for k in range(4)]
        assert np.isclose(np.mean(base_iou), np.mean(rel_iou))

    def test_scores_stay_in_unit_interval(self):
        rng = np.random.default_rng(64)
        pred = rng.integers(0, 3, 50)
        truth = rng.integers(0, 3, 50)
        cm = metrics.ConfusionMatrix(3).accumulate(pred, truth)
        s = metrics.summarize(cm)
        values = [v.value for v in s.f1 + s.iou] + [s.mean_f1, s.mean_iou, s.oa]
        assert all(0.0 <= v <= 1.0 for v in values)


class TestSummary:
    def test_csv_layout(self):
        cm = cm_from([0, 1, 2, 2], [0, 1, 2, 1])
        text = metrics.summarize(cm).to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "class,f1,iou"
        assert len(lines) == 1 + 3 + 3
        assert lines[-1].startswith("overall_accuracy,")

    def test_foreground_mean_excludes_background(self):
        cm = metrics.ConfusionMatrix(3)
        cm.counts[0, 0] = 10      # background perfect
        cm.counts[1, 1] = 5
        cm.counts[1, 2] = 5       # class 1 half recalled
        s = metrics.summarize(cm)
        fg_f1 = [metrics.f1_score(cm, k).value for k in (1, 2)]
        assert s.mean_f1 == pytest.approx(np.mean(fg_f1))
