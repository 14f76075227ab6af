"""Metric ratios against a rational oracle, plus beat matching."""

from fractions import Fraction

import numpy as np
import pytest

from ecgarr.metrics import (
    ConfusionCounts,
    MetricsReport,
    compute_metrics,
    confusion_from_labels,
    format_report,
    match_beats,
)


def test_counts_validation_and_total():
    c = ConfusionCounts(1, 2, 3, 4)
    assert c.total == 10
    with pytest.raises(ValueError, match="tp"):
        ConfusionCounts(-1, 0, 0, 0)
    with pytest.raises(ValueError, match="fn"):
        ConfusionCounts(0, 0, 0, 1.5)


def test_counts_pool_by_addition():
    a = ConfusionCounts(1, 2, 3, 4)
    b = ConfusionCounts(10, 20, 30, 40)
    assert a + b == ConfusionCounts(11, 22, 33, 44)


def test_hand_counted_example():
    r = compute_metrics(ConfusionCounts(tp=2, tn=2, fp=1, fn=0))
    assert r.accuracy == 0.8
    assert r.sensitivity == 1.0
    assert r.specificity == float(Fraction(2, 3))
    assert r.ppv == float(Fraction(2, 3))


def test_all_true_positives():
    r = compute_metrics(ConfusionCounts(tp=7))
    assert r.accuracy == 1.0
    assert r.sensitivity == 1.0
    assert r.ppv == 1.0
    assert r.specificity is None  # no negative beats at all


def test_zero_total_errors():
    with pytest.raises(ValueError, match="zero beats"):
        compute_metrics(ConfusionCounts())


def test_undefined_metrics_are_none_not_zero():
    r = compute_metrics(ConfusionCounts(tn=5))
    assert r.sensitivity is None
    assert r.ppv is None
    assert r.accuracy == 1.0
    assert r.specificity == 1.0


def test_randomized_against_fraction_oracle():
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 1000:
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 6, size=4))
        if tp + tn + fp + fn == 0:
            continue
        r = compute_metrics(ConfusionCounts(tp, tn, fp, fn))
        def oracle(num, den):
            return None if den == 0 else float(Fraction(num, den))
        assert r.accuracy == oracle(tp + tn, tp + tn + fp + fn)
        assert r.sensitivity == oracle(tp, tp + fn)
        assert r.specificity == oracle(tn, tn + fp)
        assert r.ppv == oracle(tp, tp + fp)
        checked += 1


def test_report_range_validation():
    with pytest.raises(ValueError, match="accuracy"):
        MetricsReport(1.2, None, None, None, ConfusionCounts(tp=1))


def test_confusion_from_labels():
    t = np.array([1, 1, 0, 0, 1, 0])
    p = np.array([1, 0, 0, 1, 1, 0])
    c = confusion_from_labels(t, p)
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 2, 1, 1)
    with pytest.raises(ValueError, match="shapes"):
        confusion_from_labels([1], [1, 0])
    with pytest.raises(ValueError, match="0 or 1"):
        confusion_from_labels([2], [1])


def test_format_report_is_deterministic_text():
    r = compute_metrics(ConfusionCounts(tp=2, tn=2, fp=1, fn=0),
                        config={"activation": "pla", "seed": 7})
    text = format_report(r)
    assert text == (
        "beats 5\ntp 2\ntn 2\nfp 1\nfn 0\n"
        "accuracy 0.800000\nsensitivity 1.000000\n"
        "specificity 0.666667\nppv 0.666667\n"
        "config.activation pla\nconfig.seed 7\n"
    )
    undefined = format_report(compute_metrics(ConfusionCounts(tn=3)))
    assert "sensitivity undefined" in undefined


# ---------------------------------------------------------------------------
# beat matching


def test_match_identical_lists():
    idx = [100, 500, 900]
    m = match_beats(idx, idx, sampling_frequency=360.0)
    assert m.pairs == ((100, 100), (500, 500), (900, 900))
    assert m.unmatched_predictions == ()
    assert m.unmatched_annotations == ()


def test_match_small_offset_within_window():
    # 10 ms at 360 Hz is 3.6 samples, well inside the 18-sample window
    m = match_beats([104], [100], sampling_frequency=360.0, window_ms=50.0)
    assert m.pairs == ((104, 100),)


def test_match_two_predictions_one_annotation():
    m = match_beats([95, 103], [100], sampling_frequency=1000.0, window_ms=50.0)
    assert m.pairs == ((103, 100),)  # nearest wins
    assert m.unmatched_predictions == (95,)
    assert m.unmatched_annotations == ()


def test_match_two_annotations_one_prediction():
    m = match_beats([102], [100, 140], sampling_frequency=1000.0, window_ms=50.0)
    assert m.pairs == ((102, 100),)
    assert m.unmatched_annotations == (140,)


def test_match_outside_window():
    m = match_beats([200], [100], sampling_frequency=1000.0, window_ms=50.0)
    assert m.pairs == ()
    assert m.unmatched_predictions == (200,)
    assert m.unmatched_annotations == (100,)


def test_match_window_boundary_inclusive():
    # exactly 50 samples apart at 1 kHz with a 50 ms window
    m = match_beats([150], [100], sampling_frequency=1000.0, window_ms=50.0)
    assert m.pairs == ((150, 100),)


def test_match_prefers_globally_nearest():
    m = match_beats([108, 112], [100, 110], sampling_frequency=1000.0, window_ms=50.0)
    assert set(m.pairs) == {(108, 110), (112, 100)}
    assert m.unmatched_predictions == ()
    assert m.unmatched_annotations == ()


def test_match_count_conservation():
    rng = np.random.default_rng(5)
    for _ in range(50):
        pred = np.unique(rng.integers(0, 5000, size=rng.integers(0, 40)))
        ann = np.unique(rng.integers(0, 5000, size=rng.integers(0, 40)))
        m = match_beats(pred, ann, sampling_frequency=360.0, window_ms=50.0)
        assert len(m.pairs) + len(m.unmatched_annotations) == len(ann)
        assert len(m.pairs) + len(m.unmatched_predictions) == len(pred)
        for p, a in m.pairs:
            assert abs(p - a) <= 50.0 * 360.0 / 1000.0


def test_match_input_validation():
    with pytest.raises(ValueError, match="sorted"):
        match_beats([5, 3], [1], sampling_frequency=360.0)
    with pytest.raises(ValueError, match="sampling_frequency"):
        match_beats([1], [1], sampling_frequency=0.0)
