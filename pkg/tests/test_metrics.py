"""Tests for confusion counting and the per-frame F-measure convention."""

import numpy as np
import pytest

from illumov.metrics import (
    FrameScore,
    NoEvaluableFramesError,
    confusion,
    f_measure_sequence,
    score_frames,
)


def brute_force_counts(pred, gt, roi=None):
    """Per-pixel loop oracle for the confusion counts."""
    tp = fp = fn = tn = 0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            if roi is not None and not roi[i, j]:
                continue
            p = pred[i, j] > 0
            g = gt[i, j] > 0
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif not p and g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def test_confusion_matches_pixel_loop():
    rng = np.random.default_rng(17)
    for trial in range(50):
        pred = (rng.uniform(size=(16, 16)) > 0.6).astype(np.uint8)
        gt = (rng.uniform(size=(16, 16)) > 0.6).astype(np.uint8)
        roi = (rng.uniform(size=(16, 16)) > 0.2) if trial % 3 == 0 else None
        s = confusion(pred, gt, roi)
        assert (s.tp, s.fp, s.fn, s.tn) == brute_force_counts(pred, gt, roi)
        total = 256 if roi is None else int(roi.sum())
        assert s.tp + s.fp + s.fn + s.tn == total


def test_confusion_identical_masks():
    rng = np.random.default_rng(2)
    mask = (rng.uniform(size=(30, 30)) > 0.889).astype(np.uint8)
    n_pos = int(mask.sum())
    s = confusion(mask, mask)
    assert (s.tp, s.fp, s.fn, s.tn) == (n_pos, 0, 0, 900 - n_pos)
    assert s.f_measure == 1.0


def test_confusion_all_ones_vs_all_zeros():
    pred = np.ones((5, 10), dtype=np.uint8)
    gt = np.zeros((5, 10), dtype=np.uint8)
    s = confusion(pred, gt)
    assert (s.tp, s.fp, s.fn, s.tn) == (0, 50, 0, 0)
    assert s.f_measure == 0.0


def test_confusion_swapping_masks_swaps_fp_fn():
    rng = np.random.default_rng(8)
    a = (rng.uniform(size=(12, 12)) > 0.5).astype(np.uint8)
    b = (rng.uniform(size=(12, 12)) > 0.5).astype(np.uint8)
    s_ab = confusion(a, b)
    s_ba = confusion(b, a)
    assert (s_ab.tp, s_ab.tn) == (s_ba.tp, s_ba.tn)
    assert (s_ab.fp, s_ab.fn) == (s_ba.fn, s_ba.fp)


def test_confusion_shape_mismatch_raises():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 2)), roi=np.ones((4, 4)))


def test_f_measure_balanced_case():
    # precision = recall = 0.6 gives F = 0.6 exactly
    s = FrameScore(tp=6, fp=4, fn=4, tn=0)
    assert np.isclose(s.precision, 0.6)
    assert np.isclose(s.recall, 0.6)
    assert np.isclose(s.f_measure, 0.6)


def test_f_measure_known_unbalanced_case():
    # P = 2/3, R = 1/2 -> F = 2 * (2/3) * (1/2) / (2/3 + 1/2) = 4/7
    s = FrameScore(tp=2, fp=1, fn=2, tn=10)
    assert np.isclose(s.f_measure, 4.0 / 7.0)


def test_empty_both_is_undefined():
    s = FrameScore(tp=0, fp=0, fn=0, tn=25)
    assert s.f_measure is None
    assert s.precision is None
    assert s.recall is None


def test_prediction_on_empty_truth_scores_zero():
    s = FrameScore(tp=0, fp=7, fn=0, tn=18)
    assert s.f_measure == 0.0
    assert s.recall is None  # no positives in ground truth


def test_missed_object_scores_zero():
    s = FrameScore(tp=0, fp=0, fn=5, tn=20)
    assert s.f_measure == 0.0
    assert s.precision is None  # empty prediction


def test_sequence_mean_skips_undefined_frames():
    scores = [
        FrameScore(tp=4, fp=1, fn=1, tn=94),   # P = R = 0.8 -> F = 0.8
        FrameScore(tp=0, fp=0, fn=0, tn=100),  # skipped
        FrameScore(tp=3, fp=2, fn=2, tn=93),   # P = R = 0.6 -> F = 0.6
    ]
    assert np.isclose(f_measure_sequence(scores), 0.7)


def test_sequence_mean_counts_zero_frames():
    scores = [
        FrameScore(tp=5, fp=0, fn=0, tn=95),  # F = 1
        FrameScore(tp=0, fp=3, fn=0, tn=97),  # F = 0
    ]
    assert np.isclose(f_measure_sequence(scores), 0.5)


def test_sequence_all_undefined_raises():
    scores = [FrameScore(tp=0, fp=0, fn=0, tn=10)] * 3
    with pytest.raises(NoEvaluableFramesError):
        f_measure_sequence(scores)


def test_score_frames_alignment():
    rng = np.random.default_rng(4)
    preds = [(rng.uniform(size=(6, 6)) > 0.5).astype(np.uint8) for _ in range(4)]
    gts = [(rng.uniform(size=(6, 6)) > 0.5).astype(np.uint8) for _ in range(4)]
    scores = score_frames(preds, gts)
    assert len(scores) == 4
    for s, p, g in zip(scores, preds, gts):
        assert (s.tp, s.fp, s.fn, s.tn) == brute_force_counts(p, g)
    with pytest.raises(ValueError):
        score_frames(preds, gts[:3])


def test_score_frames_with_roi():
    pred = np.ones((4, 4), dtype=np.uint8)
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, 0] = 1
    roi = np.zeros((4, 4), dtype=np.uint8)
    roi[0, :2] = 1
    scores = score_frames([pred], [gt], roi)
    assert (scores[0].tp, scores[0].fp, scores[0].fn, scores[0].tn) == (1, 1, 0, 0)


def test_nonbinary_inputs_treated_as_positive():
    # anything > 0 counts as foreground, matching 0/255 mask bytes
    pred = np.array([[0, 255], [128, 0]], dtype=np.uint8)
    gt = np.array([[0, 1], [0, 1]], dtype=np.uint8)
    s = confusion(pred, gt)
    assert (s.tp, s.fp, s.fn, s.tn) == (1, 1, 1, 1)
