import itertools
import math

import numpy as np
import pytest

from rigidflow.metrics import angular_error, flow_metrics, format_table, metric_report, pair_scores, seg_metrics


def brute_force_assignment(pred, gt):
    """Best injective gt -> segment assignment by total F over all possibilities."""
    gt_ids = sorted(set(np.unique(gt)) - {0})
    pr_ids = sorted(set(np.unique(pred)) - {0})
    best = None
    for choice in itertools.product([None] + pr_ids, repeat=len(gt_ids)):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        vals = []
        for a, b in zip(gt_ids, choice):
            if b is None:
                vals.append((0.0, 0.0, 0.0))
                continue
            inter = np.sum((gt == a) & (pred == b))
            p = inter / np.sum(pred == b)
            r = inter / np.sum(gt == a)
            vals.append((p, r, 2 * p * r / (p + r) if inter else 0.0))
        total = sum(v[2] for v in vals)
        if best is None or total > best[0]:
            best = (total, vals)
    return best[1]


def test_identical_flow():
    S = np.random.default_rng(0).normal(size=(5, 6, 3))
    m = flow_metrics(S, S)
    assert m.epe_all == 0 and m.aae_all == 0 and m.aae_masked == 0


def test_uniform_centimetre_offset():
    gt = np.zeros((4, 4, 3))
    m = flow_metrics(gt + [0.01, 0, 0], gt)
    assert m.epe_all == 1.0 and m.epe_all_std == 0.0


def test_aae_sixty_degrees():
    ang = angular_error(np.array([0.0, 1, 0]), np.array([1.0, 0, 0]))
    assert ang == pytest.approx(60.0, abs=1e-9)
    assert math.degrees(math.acos((0 + 1) / (math.sqrt(2) * math.sqrt(2)))) == pytest.approx(60.0, abs=1e-9)


def test_aae_matches_arccos_definition(rng):
    a = rng.normal(size=(200, 3))
    b = rng.normal(size=(200, 3))
    cos = (np.sum(a * b, axis=1) + 1) / (np.sqrt(np.sum(a * a, 1) + 1) * np.sqrt(np.sum(b * b, 1) + 1))
    np.testing.assert_allclose(angular_error(a, b), np.degrees(np.arccos(cos)), atol=1e-9)


def test_masked_metrics_use_both_frames_mask():
    gt = np.zeros((2, 2, 3))
    pred = gt.copy()
    pred[0, 0] = [0.04, 0, 0]
    both = np.array([[0.0, 1.0], [1.0, 1.0]])
    m = flow_metrics(pred, gt, both)
    assert m.epe_all == pytest.approx(1.0)
    assert m.epe_masked == 0.0


def test_flow_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        flow_metrics(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_perfect_segmentation():
    gt = np.array([[1, 1, 2], [0, 2, 3]])
    m = seg_metrics(gt * 7, gt)  # label values need not agree
    assert (m.precision, m.recall, m.fmeasure, m.extracted, m.gt_objects) == (1, 1, 1, 3, 3)


def test_one_cluster_over_two_objects():
    gt = np.array([[1, 1, 2, 2]])
    pred = np.array([[5, 5, 5, 5]])
    m = seg_metrics(pred, gt)
    vals = brute_force_assignment(pred, gt)
    assert m.recall == pytest.approx(np.mean([v[1] for v in vals])) == pytest.approx(0.5)
    assert m.precision == pytest.approx(np.mean([v[0] for v in vals])) == pytest.approx(0.25)
    assert m.fmeasure == pytest.approx(np.mean([v[2] for v in vals]))
    assert m.extracted == 0


def test_all_background_prediction():
    m = seg_metrics(np.zeros((3, 3)), np.array([[1, 1, 0], [2, 2, 0], [0, 0, 0]]))
    assert (m.precision, m.recall, m.fmeasure, m.extracted, m.gt_objects) == (0, 0, 0, 0, 2)


def test_empty_ground_truth():
    m = seg_metrics(np.ones((2, 2)), np.zeros((2, 2)))
    assert m.gt_objects == 0 and m.fmeasure == 0


def test_extracted_threshold():
    gt = np.zeros((1, 10), dtype=int)
    gt[0, :8] = 1
    pred = np.zeros_like(gt)
    pred[0, :6] = 1  # P = 1, R = 0.75, F = 6/7 >= 0.75
    assert seg_metrics(pred, gt).extracted == 1
    pred[0, :4] = 1
    pred[0, 4:] = 0  # F = 2/3
    assert seg_metrics(pred, gt).extracted == 0


def test_greedy_picks_highest_f_first():
    gt = np.array([[1, 1, 1, 1, 2, 2]])
    pred = np.array([[1, 1, 1, 2, 2, 2]])
    pairs, _ = pair_scores(pred, gt)
    m = seg_metrics(pred, gt)
    f = {(a, b): s for a, b, _, _, s in pairs}
    # object 1 takes segment 1 (F 6/7), object 2 gets segment 2 (F 0.8)
    assert m.fmeasure == pytest.approx((f[1, 1] + f[2, 2]) / 2)


def test_report_single_scene():
    row = {"epe_all": 1.5, "fmeasure": 0.8, "extracted": 2, "gt_objects": 3}
    rep = metric_report([row])
    assert rep["epe_all"] == 1.5 and rep["epe_all_std"] == 0.0 and rep["extracted"] == "2/3"


def test_report_mean_and_population_std():
    rep = metric_report([{"epe_all": 1.0, "extracted": 3, "gt_objects": 5},
                         {"epe_all": 3.0, "extracted": 2, "gt_objects": 5}])
    assert rep["epe_all"] == 2.0 and rep["epe_all_std"] == 1.0
    assert rep["extracted"] == "5/10"


def test_report_empty_and_table():
    assert metric_report([]) == {"n_scenes": 0}
    table = format_table({"n_scenes": 2, "epe_all": 1.25})
    assert "epe_all" in table and "1.25" in table
