"""FAR/FRR/EER and ROC computation over labeled score populations.

Convention: ``scores_pos`` are scores that should be HIGH (the class being
detected / accepted), ``scores_neg`` should be low. FAR(t) is the fraction
of negatives at or above threshold t, FRR(t) the fraction of positives
below it. Callers working with dissimilarities negate their scores.
"""

from __future__ import annotations

import numpy as np

__all__ = ["roc_points", "eer", "far_frr_at"]


def roc_points(scores_pos, scores_neg):
    """(threshold, FAR, FRR) rows swept over all distinct scores.

    FAR is nonincreasing and FRR nondecreasing in the threshold; the sweep
    includes a sentinel below the minimum (FAR=1, FRR=0) and above the
    maximum (FAR=0, FRR=1).
    """
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score populations must be nonempty")
    allscores = np.unique(np.concatenate([pos, neg]))
    thresholds = np.concatenate(
        [[allscores[0] - 1.0], allscores, [allscores[-1] + 1.0]]
    )
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    far = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    return np.stack([thresholds, far, frr], axis=1)


def far_frr_at(scores_pos, scores_neg, threshold: float):
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    return float(np.mean(neg >= threshold)), float(np.mean(pos < threshold))


def eer(scores_pos, scores_neg) -> float:
    """Rate at which FAR equals FRR, linearly interpolated between sweeps."""
    pts = roc_points(scores_pos, scores_neg)
    diff = pts[:, 1] - pts[:, 2]  # FAR - FRR, starts >= 0, ends <= 0
    idx = np.nonzero(diff <= 0)[0][0]
    if idx == 0 or diff[idx] == 0:
        return float(0.5 * (pts[idx, 1] + pts[idx, 2]))
    f0, r0 = pts[idx - 1, 1], pts[idx - 1, 2]
    f1, r1 = pts[idx, 1], pts[idx, 2]
    denom = (f0 - r0) - (f1 - r1)
    if denom == 0:
        return float(0.5 * (f0 + r0))
    w = (f0 - r0) / denom
    far = f0 + w * (f1 - f0)
    frr = r0 + w * (r1 - r0)
    return float(0.5 * (far + frr))
