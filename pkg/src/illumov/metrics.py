"""Mask scoring: per-frame confusion counts and sequence F-measure.

The sequence score is the per-frame F-measure averaged uniformly over frames,
not the F-measure of pooled counts.  Frames where both ground truth and
prediction are empty carry no information and are skipped; a non-empty
prediction on an empty ground-truth frame scores 0 (false positives are never
rewarded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NoEvaluableFramesError(Exception):
    """Every frame in the sequence had an undefined F-measure."""


@dataclass(frozen=True)
class FrameScore:
    """Pixel confusion counts for one frame."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float | None:
        if self.tp + self.fp == 0:
            return None
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float | None:
        if self.tp + self.fn == 0:
            return None
        return self.tp / (self.tp + self.fn)

    @property
    def f_measure(self) -> float | None:
        """2PR/(P+R); None when both masks are empty, 0 on any one-sided miss."""
        if self.tp > 0:
            p, r = self.precision, self.recall
            return 2.0 * p * r / (p + r)
        if self.fp == 0 and self.fn == 0:
            return None
        return 0.0


def confusion(pred_mask: np.ndarray, gt_mask: np.ndarray,
              roi: np.ndarray | None = None) -> FrameScore:
    """Count tp/fp/fn/tn over the ROI pixels (all pixels when roi is None)."""
    pred = np.asarray(pred_mask) > 0
    gt = np.asarray(gt_mask) > 0
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if roi is not None:
        sel = np.asarray(roi) > 0
        if sel.shape != gt.shape:
            raise ValueError(f"roi shape {sel.shape} does not match {gt.shape}")
        pred = pred[sel]
        gt = gt[sel]
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return FrameScore(tp=tp, fp=fp, fn=fn, tn=tn)


def score_frames(pred_masks, gt_masks, roi=None) -> list[FrameScore]:
    """Confusion counts for aligned lists of prediction / ground-truth masks."""
    if len(pred_masks) != len(gt_masks):
        raise ValueError(
            f"{len(pred_masks)} predictions vs {len(gt_masks)} ground-truth masks"
        )
    return [confusion(p, g, roi) for p, g in zip(pred_masks, gt_masks)]


def f_measure_sequence(scores: list[FrameScore]) -> float:
    """Uniform mean of the defined per-frame F-measures."""
    values = [s.f_measure for s in scores if s.f_measure is not None]
    if not values:
        raise NoEvaluableFramesError("no evaluable frames in sequence")
    return float(np.mean(values))
