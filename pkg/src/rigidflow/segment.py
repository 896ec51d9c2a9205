"""Motion segmentation from per-pixel trajectory features.

Pixels are grouped greedily: the unassigned foreground pixel with the highest
centroid score seeds a segment, and every unassigned foreground pixel whose
trajectory feature lies within the seed's sphere radius joins it. Segments are
then reduced to one rigid motion each and the scene flow is recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo


@dataclass
class SegmentationResult:
    labels: np.ndarray                      # (H, W) int32, 0 = background
    motions: dict = field(default_factory=dict)  # label -> RigidMotion
    counts: dict = field(default_factory=dict)   # label -> pixel count

    @property
    def n_segments(self) -> int:
        return len(self.counts)


def trajectory_map(X, T):
    """Per-pixel trajectory feature ``[X, X + T]``."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    if X.shape != T.shape:
        raise ValueError(f"X and T maps differ in shape: {X.shape} vs {T.shape}")
    return np.concatenate([X, X + T], axis=-1)


def _squeeze(a):
    a = np.asarray(a)
    return a[..., 0] if a.ndim == 3 else a


def greedy_cluster(xi, B, eta, mask) -> SegmentationResult:
    """Greedy sphere clustering of foreground pixels.

    ``eta`` may be a probability or a logit; only its ordering matters. Ties in
    ``eta`` go to the earlier pixel in row-major order. The sphere test is
    inclusive (``<=``).
    """
    xi = np.asarray(xi, dtype=float)
    B = _squeeze(B).astype(float)
    eta = _squeeze(eta).astype(float)
    fg = _squeeze(mask).astype(bool)
    H, W = fg.shape
    if xi.shape[:2] != (H, W) or B.shape != (H, W) or eta.shape != (H, W):
        raise ValueError("xi, B, eta and mask maps must share (H, W)")

    labels = np.zeros(H * W, dtype=np.int32)
    pix = np.flatnonzero(fg.reshape(-1))
    feats = xi.reshape(-1, xi.shape[-1])[pix]
    radii = B.reshape(-1)[pix]
    # seed order: eta descending, then row-major
    order = np.lexsort((pix, -eta.reshape(-1)[pix]))
    unassigned = np.ones(len(pix), dtype=bool)
    counts = {}
    k = 0
    cursor = 0
    while cursor < len(order):
        s = order[cursor]
        if not unassigned[s]:
            cursor += 1
            continue
        k += 1
        cand = np.flatnonzero(unassigned)
        d = np.linalg.norm(feats[cand] - feats[s], axis=1)
        members = cand[d <= radii[s]]
        members = np.union1d(members, [s])
        unassigned[members] = False
        labels[pix[members]] = k
        counts[k] = int(members.size)
    return SegmentationResult(labels.reshape(H, W), {}, counts)


def _label_means(values, labels, ids):
    """Per-label mean of ``values (N, C)``.

    Means are taken as the first member's value plus the mean offset from it,
    so a label whose members all carry the same value returns it exactly.
    """
    out = {}
    for k in ids:
        v = values[labels == k]
        ref = v[0]
        out[k] = ref + (v - ref).sum(axis=0) / len(v)
    return out


def average_quaternions(quats):
    """Sign-aligned, normalized arithmetic mean of unit quaternions ``(N, 4)``.

    Adequate for tightly clustered rotations; the first quaternion fixes the
    hemisphere.
    """
    quats = np.asarray(quats, dtype=float)
    ref = quats[0]
    signs = np.where(quats @ ref < 0.0, -1.0, 1.0)
    aligned = quats * signs[:, None]
    mean = ref + (aligned - ref).sum(axis=0) / len(aligned)
    return geo.quat_canonical(mean / np.linalg.norm(mean))


def refine_rigid(labels, Q, T, X) -> dict:
    """One rigid motion per label by averaging the per-pixel predictions."""
    labels = _squeeze(labels)
    flat = labels.reshape(-1)
    ids = [int(k) for k in np.unique(flat) if k > 0]
    Qf = np.asarray(Q, float).reshape(-1, 3)
    T_mean = _label_means(np.asarray(T, float).reshape(-1, 3), flat, ids)
    X_mean = _label_means(np.asarray(X, float).reshape(-1, 3), flat, ids)
    motions = {}
    for k in ids:
        q = average_quaternions(geo.quat_from_axis_angle(Qf[flat == k]))
        motions[k] = geo.RigidMotion(geo.axis_angle_from_quat(q), T_mean[k], X_mean[k])
    return motions


def recompute_flow(labels, motions: dict, P):
    """Scene flow from each pixel's segment motion; zero on background."""
    labels = _squeeze(labels)
    P = np.asarray(P, dtype=float)
    H, W = labels.shape
    Q = np.zeros((H, W, 3))
    T = np.zeros((H, W, 3))
    X = np.zeros((H, W, 3))
    for k, m in motions.items():
        sel = labels == k
        Q[sel] = m.Q
        T[sel] = m.T
        X[sel] = m.X
    _, S = geo.transport_point(P, Q, T, X)
    S[labels == 0] = 0.0
    return S


def per_pixel_flow(P, Q, T, X, mask=None):
    """Scene flow from per-pixel motion predictions (no segmentation)."""
    _, S = geo.transport_point(P, Q, T, X)
    if mask is not None:
        S = S * (_squeeze(mask)[..., None] > 0)
    return S


def segment(xi, B, eta, mask, Q=None, T=None, X=None, P=None, refine=False):
    """Cluster, and with ``refine`` also average motions and recompute flow.

    Returns ``(SegmentationResult, S or None)``.
    """
    result = greedy_cluster(xi, B, eta, mask)
    S = None
    if refine:
        result.motions = refine_rigid(result.labels, Q, T, X)
        S = recompute_flow(result.labels, result.motions, P)
    return result, S
