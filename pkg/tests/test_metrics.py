import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bevkit.metrics import (
    RECALL_THRESHOLDS,
    depth_metrics,
    filter_by_speed,
    match_and_recall,
)
from bevkit.nms import Box3D


def literal_depth_metrics(pred, gt, mask):
    """Independent transcription of the five metric definitions, scalar loops."""
    ps = [float(p) for p, m in zip(pred.ravel(), mask.ravel()) if m]
    gs = [float(g) for g, m in zip(gt.ravel(), mask.ravel()) if m]
    n = len(ps)
    es = [math.log(p) - math.log(g) for p, g in zip(ps, gs)]
    mean_e = sum(es) / n
    mean_e2 = sum(e * e for e in es) / n
    return {
        "silog": 100.0 * math.sqrt(max(mean_e2 - mean_e * mean_e, 0.0)),
        "abs_rel": sum(abs(p - g) / g for p, g in zip(ps, gs)) / n,
        "sq_rel": sum((p - g) ** 2 / g for p, g in zip(ps, gs)) / n,
        "log10": sum(abs(math.log10(p) - math.log10(g)) for p, g in zip(ps, gs)) / n,
        "rmse": math.sqrt(sum((p - g) ** 2 for p, g in zip(ps, gs)) / n),
    }


class TestDepthMetrics:
    def test_perfect_prediction_is_all_zero(self):
        gt = np.random.default_rng(0).uniform(2, 50, (8, 8))
        m = depth_metrics(gt, gt, np.ones_like(gt, dtype=bool))
        assert m.silog == 0 and m.abs_rel == 0 and m.sq_rel == 0
        assert m.log10 == 0 and m.rmse == 0

    def test_uniform_doubling_is_scale_invariant_for_silog(self):
        gt = np.random.default_rng(1).uniform(2, 50, (8, 8))
        mask = np.ones_like(gt, dtype=bool)
        m = depth_metrics(2 * gt, gt, mask)
        assert abs(m.silog) < 1e-9
        assert m.abs_rel == pytest.approx(1.0)

    def test_matches_literal_transcription(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gt = rng.uniform(2, 50, (10, 10))
            pred = gt * rng.uniform(0.5, 2.0, (10, 10))
            mask = rng.random((10, 10)) > 0.3
            got = depth_metrics(pred, gt, mask).to_dict()
            want = literal_depth_metrics(pred, gt, mask)
            for key in want:
                assert got[key] == pytest.approx(want[key], abs=1e-10)

    def test_error_cases(self):
        gt = np.ones((4, 4)) * 5
        with pytest.raises(ValueError):
            depth_metrics(gt, gt[:2], np.ones((4, 4), bool))
        with pytest.raises(ValueError):
            depth_metrics(gt, gt, np.zeros((4, 4), bool))
        bad = gt.copy()
        bad[0, 0] = 0.0
        with pytest.raises(ValueError):
            depth_metrics(bad, gt, np.ones((4, 4), bool))

    def test_mask_excludes_pixels(self):
        gt = np.full((2, 2), 10.0)
        pred = gt.copy()
        pred[0, 0] = 20.0
        mask = np.array([[False, True], [True, True]])
        assert depth_metrics(pred, gt, mask).rmse == 0.0

    @settings(max_examples=50, deadline=None)
    @given(scale=st.floats(0.01, 100.0))
    def test_silog_scale_invariance_property(self, scale):
        rng = np.random.default_rng(7)
        gt = rng.uniform(2, 50, (6, 6))
        pred = gt * rng.uniform(0.8, 1.2, (6, 6))
        mask = np.ones_like(gt, dtype=bool)
        base = depth_metrics(pred, gt, mask).silog
        scaled = depth_metrics(scale * pred, gt, mask).silog
        assert scaled == pytest.approx(base, abs=1e-9)


def gt_box(x, y, cls=0, vx=0.0, vy=0.0):
    return Box3D(x=x, y=y, z=0, dx=4.0, dy=2.0, dz=1.5, yaw=0.0, vx=vx, vy=vy,
                 score=1.0, class_id=cls)


def pred_box(x, y, score, cls=0):
    return Box3D(x=x, y=y, z=0, dx=4.0, dy=2.0, dz=1.5, yaw=0.0, score=score,
                 class_id=cls)


class TestMatchAndRecall:
    def test_exact_predictions_give_full_recall(self):
        gts = [gt_box(0, 0), gt_box(10, 0), gt_box(0, 10)]
        preds = [pred_box(b.x, b.y, 0.9) for b in gts]
        report = match_and_recall(preds, gts)
        assert all(r == 1.0 for r in report.recalls.values())
        assert report.mean_matched_distance == pytest.approx(0.0)

    def test_uniform_offset_splits_thresholds(self):
        gts = [gt_box(0, 0), gt_box(20, 0)]
        preds = [pred_box(b.x + 1.5, b.y, 0.9) for b in gts]
        report = match_and_recall(preds, gts)
        assert report.recalls[0.5] == 0.0
        assert report.recalls[1.0] == 0.0
        assert report.recalls[2.0] == 1.0
        assert report.recalls[4.0] == 1.0
        assert report.mean_matched_distance == pytest.approx(1.5)

    def test_class_must_match(self):
        gts = [gt_box(0, 0, cls=1)]
        preds = [pred_box(0, 0, 0.9, cls=0)]
        assert match_and_recall(preds, gts).recalls[4.0] == 0.0

    def test_each_gt_matched_once(self):
        gts = [gt_box(0, 0)]
        preds = [pred_box(0.1, 0, 0.9), pred_box(-0.1, 0, 0.8)]
        assert match_and_recall(preds, gts).recalls[2.0] == 1.0

    def test_empty_gt_flags_and_reports_one(self):
        report = match_and_recall([pred_box(0, 0, 0.5)], [])
        assert report.empty_gt
        assert all(r == 1.0 for r in report.recalls.values())

    def test_recall_monotone_in_threshold(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            gts = [gt_box(*rng.uniform(-20, 20, 2), cls=int(rng.integers(2)))
                   for _ in range(rng.integers(1, 12))]
            preds = [pred_box(b.x + rng.normal(0, 1.5), b.y + rng.normal(0, 1.5),
                              float(rng.uniform(0.1, 1)), cls=b.class_id)
                     for b in gts for _ in range(rng.integers(0, 3))]
            if not preds:
                continue
            rec = match_and_recall(preds, gts).recalls
            values = [rec[t] for t in sorted(rec)]
            assert all(b >= a for a, b in zip(values, values[1:]))


class TestFilterBySpeed:
    def test_moving_and_static_split(self):
        boxes = [gt_box(0, 0, vx=2.0), gt_box(1, 0, vx=0.2), gt_box(2, 0, vy=1.5)]
        moving = filter_by_speed(boxes, min_speed=1.0)
        static = filter_by_speed(boxes, max_speed=1.0)
        assert [b.x for b in moving] == [0, 2]
        assert [b.x for b in static] == [1]

    def test_thresholds_tuple_matches_protocol(self):
        assert RECALL_THRESHOLDS == (0.5, 1.0, 2.0, 4.0)

    def test_recall_on_speed_filtered_subsets(self):
        # detector that localizes static objects well and moving ones poorly
        gts = [gt_box(0, 0, vx=0.0), gt_box(20, 0, vx=0.0),
               gt_box(0, 20, vx=3.0), gt_box(20, 20, vx=3.0)]
        preds = []
        for g in gts:
            offset = 3.0 if g.speed > 1.0 else 0.3
            preds.append(pred_box(g.x + offset, g.y, 0.9, cls=g.class_id))
        moving_gt = filter_by_speed(gts, min_speed=1.0)
        static_gt = filter_by_speed(gts, max_speed=1.0)
        moving_recall = match_and_recall(preds, moving_gt).recalls
        static_recall = match_and_recall(preds, static_gt).recalls
        assert static_recall[0.5] == 1.0
        assert moving_recall[2.0] == 0.0
        assert moving_recall[4.0] == 1.0
