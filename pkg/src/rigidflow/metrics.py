"""Scene-flow and motion-segmentation metrics, and their aggregation over scenes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

F_THRESHOLD = 0.75


@dataclass
class FlowMetrics:
    epe_all: float
    epe_all_std: float
    epe_masked: float
    epe_masked_std: float
    aae_all: float
    aae_all_std: float
    aae_masked: float
    aae_masked_std: float

    def row(self) -> dict:
        return asdict(self)


@dataclass
class SegMetrics:
    precision: float
    recall: float
    fmeasure: float
    extracted: int
    gt_objects: int

    def row(self) -> dict:
        return asdict(self)


def endpoint_error(pred, gt):
    """Per-pixel Euclidean flow error, in the input units."""
    return np.linalg.norm(np.asarray(pred, float) - np.asarray(gt, float), axis=-1)


def angular_error(pred, gt):
    """Per-pixel 4D angular error in degrees.

    Each flow vector is extended by a unit fourth component. The angle is
    evaluated as ``2 * atan2(|a - b|, |a + b|)`` on the normalized vectors,
    which stays exact for identical inputs.
    """
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    one = np.ones(pred.shape[:-1] + (1,))
    a = np.concatenate([pred, one], axis=-1)
    b = np.concatenate([gt, one], axis=-1)
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    ang = 2.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))
    return np.degrees(ang)


def _mean_std(x):
    if x.size == 0:
        return 0.0, 0.0
    return float(x.mean()), float(x.std())


def flow_metrics(pred_S, gt_S, both_mask=None) -> FlowMetrics:
    """EPE (cm) and AAE (degrees), over the whole image and over the masked region.

    ``both_mask`` selects pixels of objects visible in both frames; without it
    the masked figures equal the whole-image ones.
    """
    pred_S = np.asarray(pred_S, float)
    gt_S = np.asarray(gt_S, float)
    if pred_S.shape != gt_S.shape:
        raise ValueError(f"flow maps differ in shape: {pred_S.shape} vs {gt_S.shape}")
    epe = 100.0 * endpoint_error(pred_S, gt_S)
    aae = angular_error(pred_S, gt_S)
    if both_mask is None:
        sel = np.ones(epe.shape, dtype=bool)
    else:
        sel = np.asarray(both_mask).reshape(epe.shape) > 0.5
    ea, eas = _mean_std(epe)
    em, ems = _mean_std(epe[sel])
    aa, aas = _mean_std(aae)
    am, ams = _mean_std(aae[sel])
    return FlowMetrics(ea, eas, em, ems, aa, aas, am, ams)


def pair_scores(pred_labels, gt_labels):
    """Precision/recall/F for every (ground-truth object, predicted segment) pair with overlap.

    Returns a list of ``(gt_id, pred_id, P, R, F)``.
    """
    p = np.asarray(pred_labels).reshape(-1).astype(np.int64)
    g = np.asarray(gt_labels).reshape(-1).astype(np.int64)
    if p.shape != g.shape:
        raise ValueError("label maps differ in shape")
    gt_ids, gt_sizes = np.unique(g[g > 0], return_counts=True)
    pr_ids, pr_sizes = np.unique(p[p > 0], return_counts=True)
    gsize = dict(zip(gt_ids.tolist(), gt_sizes.tolist()))
    psize = dict(zip(pr_ids.tolist(), pr_sizes.tolist()))
    both = (g > 0) & (p > 0)
    pairs, inter = np.unique(np.stack([g[both], p[both]], axis=1), axis=0, return_counts=True) \
        if both.any() else (np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
    out = []
    for (a, b), n in zip(pairs.tolist(), inter.tolist()):
        prec = n / psize[b]
        rec = n / gsize[a]
        f = 2 * prec * rec / (prec + rec)
        out.append((a, b, prec, rec, f))
    return out, sorted(gsize)


def seg_metrics(pred_labels, gt_labels, threshold: float = F_THRESHOLD) -> SegMetrics:
    """Segmentation quality with one-to-one greedy matching by F-measure.

    Ground-truth objects are matched to predicted segments in order of
    decreasing pair F-measure (ties by ids); unmatched objects score zero.
    Reported values are means over ground-truth objects, and ``extracted``
    counts matches with F at or above ``threshold``.
    """
    scores, gt_ids = pair_scores(pred_labels, gt_labels)
    if not gt_ids:
        return SegMetrics(0.0, 0.0, 0.0, 0, 0)
    scores.sort(key=lambda s: (-s[4], s[0], s[1]))
    used_gt, used_pred = {}, set()
    for a, b, prec, rec, f in scores:
        if a in used_gt or b in used_pred:
            continue
        used_gt[a] = (prec, rec, f)
        used_pred.add(b)
    n = len(gt_ids)
    vals = [used_gt.get(a, (0.0, 0.0, 0.0)) for a in gt_ids]
    prec = sum(v[0] for v in vals) / n
    rec = sum(v[1] for v in vals) / n
    f = sum(v[2] for v in vals) / n
    extracted = sum(1 for v in vals if v[2] >= threshold)
    return SegMetrics(prec, rec, f, extracted, n)


def metric_report(scenes: list) -> dict:
    """Aggregate per-scene metric rows into mean and population std.

    ``scenes`` holds dicts of numbers (flow and/or segmentation rows). Integer
    counts ``extracted``/``gt_objects`` are summed and rendered as ``"sum/total"``.
    """
    if not scenes:
        return {"n_scenes": 0}
    report = {"n_scenes": len(scenes)}
    keys = [k for k in scenes[0] if k not in ("extracted", "gt_objects") and not k.endswith("_std")]
    for k in keys:
        vals = np.array([float(s[k]) for s in scenes])
        report[k] = float(vals.mean())
        report[k + "_std"] = float(vals.std())
    if "extracted" in scenes[0]:
        ext = sum(int(s["extracted"]) for s in scenes)
        tot = sum(int(s["gt_objects"]) for s in scenes)
        report["extracted"] = f"{ext}/{tot}"
    return report


def format_table(report: dict) -> str:
    """Human-readable two-column table of a report."""
    width = max(len(k) for k in report)
    lines = []
    for k, v in report.items():
        if isinstance(v, float):
            v = f"{v:.6g}" if math.isfinite(v) else str(v)
        lines.append(f"{k.ljust(width)}  {v}")
    return "\n".join(lines)
