import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from eyas import metrics
from eyas.core.types import BinaryMask
from eyas.errors import DimensionMismatchError, MetricUndefinedError, UnknownLabelError


def mask(fg, h=4, w=4):
    bits = np.zeros((h, w), dtype=bool)
    for y, x in fg:
        bits[y, x] = True
    return BinaryMask(bits)


def brute_force(a: BinaryMask, b: BinaryMask):
    """Independent pixel-loop oracle for all four overlap metrics."""
    inter = union = na = nb = 0
    for y in range(a.height):
        for x in range(a.width):
            va, vb = bool(a.bits[y, x]), bool(b.bits[y, x])
            inter += va and vb
            union += va or vb
            na += va
            nb += vb
    return {
        "iou": 1.0 if union == 0 else inter / union,
        "dice": 1.0 if na + nb == 0 else 2 * inter / (na + nb),
        "precision": None if na == 0 else inter / na,
        "recall": None if nb == 0 else inter / nb,
    }


class TestOverlapMetrics:
    def test_identical_masks(self):
        m = mask([(0, 0), (1, 1)])
        assert metrics.iou(m, m) == 1.0
        assert metrics.dice(m, m) == 1.0

    def test_disjoint(self):
        assert metrics.iou(mask([(0, 0)]), mask([(1, 1)])) == 0.0

    def test_one_third(self):
        a = mask([(0, 0), (0, 1)])
        b = mask([(0, 1), (0, 2)])
        assert metrics.iou(a, b) == pytest.approx(1 / 3)
        assert metrics.dice(a, b) == pytest.approx(0.5)

    def test_subset_precision_recall(self):
        pred = mask([(0, k) for k in range(4)] + [(1, 0)])  # 5 px
        truth = mask([(0, k) for k in range(4)] + [(1, k) for k in range(4)] + [(2, 0), (2, 1)])
        assert metrics.precision(pred, truth) == 1.0
        assert metrics.recall(pred, truth) == 0.5

    def test_empty_conventions(self):
        empty = mask([])
        assert metrics.iou(empty, empty) == 1.0
        assert metrics.dice(empty, empty) == 1.0
        with pytest.raises(MetricUndefinedError):
            metrics.precision(empty, mask([(0, 0)]))
        with pytest.raises(MetricUndefinedError):
            metrics.recall(mask([(0, 0)]), empty)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            metrics.iou(mask([], h=4), mask([], h=5, w=4))

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a = BinaryMask(rng.random((16, 16)) < rng.uniform(0, 1))
            b = BinaryMask(rng.random((16, 16)) < rng.uniform(0, 1))
            want = brute_force(a, b)
            assert metrics.iou(a, b) == want["iou"]
            assert metrics.dice(a, b) == want["dice"]
            if want["precision"] is not None:
                assert metrics.precision(a, b) == want["precision"]
            if want["recall"] is not None:
                assert metrics.recall(a, b) == want["recall"]

    @settings(max_examples=60, deadline=None)
    @given(
        a=hnp.arrays(np.bool_, (8, 8)),
        b=hnp.arrays(np.bool_, (8, 8)),
    )
    def test_properties(self, a, b):
        ma, mb = BinaryMask(a), BinaryMask(b)
        i, d = metrics.iou(ma, mb), metrics.dice(ma, mb)
        assert i <= d + 1e-12
        if i in (0.0, 1.0):
            assert d == i
        else:
            assert d > i
        assert metrics.iou(mb, ma) == i
        if ma.foreground_count and mb.foreground_count:
            assert metrics.precision(ma, mb) == metrics.recall(mb, ma)


class TestClassificationMetrics:
    def test_perfect(self):
        cm = metrics.confusion(["a", "b"], ["a", "b"], ["a", "b"])
        assert metrics.accuracy(cm) == 1.0
        assert metrics.per_class_accuracy(cm) == {"a": 1.0, "b": 1.0}

    def test_hand_count(self):
        cm = metrics.confusion(["A", "B", "B", "B"], ["A", "A", "B", "B"], ["A", "B"])
        assert metrics.accuracy(cm) == 0.75
        assert metrics.per_class_accuracy(cm) == {"A": 0.5, "B": 1.0}

    def test_unknown_label(self):
        with pytest.raises(UnknownLabelError):
            metrics.confusion(["A"], ["C"], ["A", "B"])

    def test_length_mismatch(self):
        with pytest.raises(MetricUndefinedError):
            metrics.confusion(["A"], ["A", "B"], ["A", "B"])

    def test_absent_row_dropped(self):
        cm = metrics.confusion(["A", "A"], ["A", "A"], ["A", "B"])
        assert "B" not in metrics.per_class_accuracy(cm)
