"""Glue between the numerical modules and the archive formats."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .geometry import RigidMotion
from .losses import PredictionMaps, SATURATED_LOGIT
from .metrics import flow_metrics, seg_metrics
from .segment import SegmentationResult, segment
from .synth import PixelMaps

MOTIONS_FILE = "motions.json"


def worker_count() -> int:
    """Worker cap from ``RIGIDFLOW_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("RIGIDFLOW_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RIGIDFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("RIGIDFLOW_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def ordered_map(fn, items):
    """``map`` over a thread pool; results keep input order."""
    items = list(items)
    n = min(worker_count(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# archives of typed maps

def save_gt(path, gt: PixelMaps, meta=None):
    fileio.save_maps(path, gt.as_dict(), meta)


def load_gt(path) -> PixelMaps:
    maps = fileio.load_maps(path, as_float64=True)
    try:
        return PixelMaps.from_dict(maps)
    except KeyError as exc:
        raise fileio.ArchiveError(f"{path}: {exc.args[0]}") from None


def save_pred(path, pred: PredictionMaps, meta=None):
    fileio.save_maps(path, pred.as_dict(), meta)


def load_pred(path) -> PredictionMaps:
    maps = fileio.load_maps(path, as_float64=True)
    try:
        return PredictionMaps.from_dict(maps)
    except KeyError as exc:
        raise fileio.ArchiveError(f"{path}: {exc.args[0]}") from None


def save_segmentation(path, result: SegmentationResult, S, meta=None):
    with fileio.atomic_dir(path) as tmp:
        fileio.write_maps(tmp, {"labels": result.labels.astype(np.int32), "S": S}, meta)
        motions = {str(k): dict(m.as_dict(), count=result.counts.get(k, 0))
                   for k, m in sorted(result.motions.items())}
        (tmp / MOTIONS_FILE).write_text(json.dumps(motions, indent=2))


def load_motions(path) -> dict:
    f = Path(path) / MOTIONS_FILE
    if not f.is_file():
        return {}
    return {int(k): RigidMotion.from_dict(v) for k, v in json.loads(f.read_text()).items()}


# --------------------------------------------------------------------------
# prediction sources

def oracle_prediction(gt: PixelMaps) -> PredictionMaps:
    return PredictionMaps.from_ground_truth(gt, SATURATED_LOGIT)


def noisy_prediction(gt: PixelMaps, sigma: float, rng: np.random.Generator) -> PredictionMaps:
    """Oracle maps with iid Gaussian noise on Q, T, X and S over the foreground.

    B and the classification logits stay exact. ``sigma == 0`` gives the oracle.
    """
    pred = oracle_prediction(gt)
    if sigma == 0:
        return pred
    fg = gt.mask > 0.5
    for name in ("Q", "T", "X", "S"):
        a = getattr(pred, name)
        setattr(pred, name, a + sigma * rng.standard_normal(a.shape) * fg)
    return pred


def segment_prediction(pred: PredictionMaps, refine: bool = False):
    """Threshold the mask at probability 0.5, cluster, optionally refine.

    Returns ``(SegmentationResult, S)`` where ``S`` is the recomputed flow when
    refining and the predicted flow otherwise.
    """
    mask = pred.mask_logit > 0.0
    if refine and pred.P is None:
        raise ValueError("refinement needs the input point cloud P in the prediction maps")
    result, S = segment(pred.xi, pred.B, pred.eta_logit, mask, pred.Q, pred.T, pred.X, pred.P, refine)
    if S is None:
        S = np.array(pred.S, dtype=float)
    return result, S


def evaluate(S_pred, gt: PixelMaps, labels=None) -> dict:
    """Flow metrics, plus segmentation metrics when ``labels`` is given, as one row."""
    if np.shape(S_pred)[:2] != gt.shape:
        raise ValueError(f"shape mismatch: prediction {np.shape(S_pred)[:2]} vs ground truth {gt.shape}")
    row = flow_metrics(S_pred, gt.S, gt.both).row()
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[:2] != gt.shape:
            raise ValueError(f"shape mismatch: labels {labels.shape[:2]} vs ground truth {gt.shape}")
        row.update(seg_metrics(labels, gt.obj_id).row())
    return row
