"""Depth-error metrics and detection recall at center-distance thresholds.

Depth metrics follow the standard five-metric evaluation suite over the
mask of pixels with ground truth (sky pixels carry gt == 0 and are always
excluded). Recall matches predictions to ground-truth boxes greedily by
descending score at each center-distance threshold.

All reductions use a fixed order, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RECALL_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class DepthMetrics:
    silog: float
    abs_rel: float
    sq_rel: float
    log10: float
    rmse: float

    def to_dict(self) -> dict:
        return {
            "silog": self.silog,
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "log10": self.log10,
            "rmse": self.rmse,
        }


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> DepthMetrics:
    """Five-metric depth error over masked pixels.

    With e = log(pred) - log(gt):
        silog  = 100 * sqrt(mean(e^2) - mean(e)^2)
        abs_rel = mean(|pred - gt| / gt)
        sq_rel  = mean((pred - gt)^2 / gt)
        log10   = mean(|log10 pred - log10 gt|)
        rmse    = sqrt(mean((pred - gt)^2))

    Raises if shapes differ, the mask is empty, or pred is non-positive on
    a masked pixel (its log is undefined).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError("pred, gt, and mask must share a shape")
    if not np.any(mask):
        raise ValueError("mask selects no pixels")
    p = pred[mask]
    g = gt[mask]
    if np.any(p <= 0):
        raise ValueError("pred must be positive on masked pixels")
    e = np.log(p) - np.log(g)
    diff = p - g
    silog = 100.0 * np.sqrt(max(np.mean(e**2) - np.mean(e) ** 2, 0.0))
    return DepthMetrics(
        silog=float(silog),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse=float(np.sqrt(np.mean(diff**2))),
    )


@dataclass(frozen=True)
class RecallReport:
    recalls: dict  # threshold (m) -> recall in [0, 1]
    mean_matched_distance: float  # at the 2 m threshold; nan when unmatched
    empty_gt: bool = False

    def to_dict(self) -> dict:
        return {
            "recalls": {str(t): r for t, r in self.recalls.items()},
            "mean_matched_distance": self.mean_matched_distance,
            "empty_gt": self.empty_gt,
        }


def _greedy_match(pred_boxes, gt_boxes, threshold: float):
    """Greedy by descending prediction score; each gt matches at most once.

    Every prediction takes the nearest unmatched same-class gt within the
    threshold. Returns the list of matched center distances.
    """
    order = sorted(range(len(pred_boxes)), key=lambda i: (-pred_boxes[i].score, i))
    taken = [False] * len(gt_boxes)
    distances = []
    for i in order:
        p = pred_boxes[i]
        best = -1
        best_d = threshold
        for j, g in enumerate(gt_boxes):
            if taken[j] or g.class_id != p.class_id:
                continue
            d = np.hypot(p.x - g.x, p.y - g.y)
            if d < best_d:
                best_d = d
                best = j
        if best >= 0:
            taken[best] = True
            distances.append(best_d)
    return distances


def match_and_recall(pred_boxes, gt_boxes, thresholds=RECALL_THRESHOLDS) -> RecallReport:
    """Recall at each center-distance threshold, plus mean matched distance.

    Empty ground truth reports recall 1 at every threshold with the
    empty_gt flag raised.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not gt_boxes:
        return RecallReport(
            recalls={t: 1.0 for t in thresholds},
            mean_matched_distance=float("nan"),
            empty_gt=True,
        )
    recalls = {}
    mean_dist = float("nan")
    for t in thresholds:
        distances = _greedy_match(pred_boxes, gt_boxes, t)
        recalls[t] = len(distances) / len(gt_boxes)
        if t == 2.0 and distances:
            mean_dist = float(np.mean(distances))
    return RecallReport(recalls=recalls, mean_matched_distance=mean_dist)


def filter_by_speed(boxes, min_speed: float = None, max_speed: float = None) -> list:
    """Box-list filter for moving/static splits (speed = |(vx, vy)|)."""
    out = []
    for b in boxes:
        if min_speed is not None and b.speed < min_speed:
            continue
        if max_speed is not None and b.speed >= max_speed:
            continue
        out.append(b)
    return out
