"""Patch correlation between feature maps and correlation-weighted max pooling.

Feature maps are ``(H, W, C)`` arrays. A correlation volume holds, for every
location, the inner products with the ``(2L+1)**2`` cells of the surrounding
patch in the second map. Channel ``(du + L) * (2L + 1) + (dv + L)`` stores the
displacement ``(du, dv)`` where ``du`` runs along rows and ``dv`` along columns.
"""

from __future__ import annotations

import numpy as np


def displacement_channel(du: int, dv: int, L: int) -> int:
    return (du + L) * (2 * L + 1) + (dv + L)


def channel_displacements(L: int) -> np.ndarray:
    """``(n, 2)`` array of ``(du, dv)`` in channel order."""
    r = np.arange(-L, L + 1)
    du, dv = np.meshgrid(r, r, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def _check_pair(a, b, what):
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError(f"{what}: feature maps must be (H, W, C) arrays")
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what}: spatial shape mismatch {a.shape[:2]} vs {b.shape[:2]}")


def _pad(f, L, value=0.0):
    return np.pad(f, ((L, L), (L, L), (0, 0)), constant_values=value)


def correlate(f_t, f_tm1, L: int = 4):
    """Dense correlation volume ``(H, W, (2L+1)**2)``; out-of-image cells are 0."""
    f_t = np.asarray(f_t, dtype=float)
    f_tm1 = np.asarray(f_tm1, dtype=float)
    _check_pair(f_t, f_tm1, "correlate")
    if f_t.shape != f_tm1.shape:
        raise ValueError(f"correlate: shape mismatch {f_t.shape} vs {f_tm1.shape}")
    if L < 0:
        raise ValueError("patch half-width L must be >= 0")
    H, W, _ = f_t.shape
    padded = _pad(f_tm1, L)
    out = np.empty((H, W, (2 * L + 1) ** 2))
    for ch, (du, dv) in enumerate(channel_displacements(L)):
        shifted = padded[L + du:L + du + H, L + dv:L + dv + W]
        out[..., ch] = np.einsum("hwc,hwc->hw", f_t, shifted)
    return out


def weighted_maxpool(corr, Pf_tm1):
    """Per-channel max over patch cells of ``corr * Pf_tm1``.

    Only cells inside the image take part in the max.
    """
    corr = np.asarray(corr, dtype=float)
    Pf_tm1 = np.asarray(Pf_tm1, dtype=float)
    _check_pair(corr, Pf_tm1, "weighted_maxpool")
    n = corr.shape[2]
    L = int(round((np.sqrt(n) - 1) / 2))
    if (2 * L + 1) ** 2 != n:
        raise ValueError(f"correlation volume has {n} channels, not a square patch count")
    H, W, C = Pf_tm1.shape
    padded = _pad(Pf_tm1, L)
    inside = _pad(np.ones((H, W, 1), dtype=bool), L, value=False)
    out = np.full((H, W, C), -np.inf)
    for ch, (du, dv) in enumerate(channel_displacements(L)):
        cell = padded[L + du:L + du + H, L + dv:L + dv + W]
        valid = inside[L + du:L + du + H, L + dv:L + dv + W]
        cand = np.where(valid, corr[..., ch:ch + 1] * cell, -np.inf)
        np.maximum(out, cand, out=out)
    return out


def cell_features(I, cell: int):
    """Mean value per ``cell x cell`` block (trailing partial blocks dropped)."""
    I = np.asarray(I, dtype=float)
    H, W, C = I.shape
    h, w = H // cell, W // cell
    if h == 0 or w == 0:
        raise ValueError(f"cell size {cell} larger than the image {H}x{W}")
    return I[:h * cell, :w * cell].reshape(h, cell, w, cell, C).mean(axis=(1, 3))


def matching_features(I_t, I_tm1, cell: int):
    """Cell-mean colors centered on their joint mean and scaled to unit length.

    Raw color inner products favor bright cells over matching ones, so the
    matcher compares directions. Zero vectors stay zero.
    """
    a = cell_features(I_t, cell)
    b = cell_features(I_tm1, cell)
    mu = 0.5 * (a.mean(axis=(0, 1)) + b.mean(axis=(0, 1)))
    out = []
    for f in (a - mu, b - mu):
        n = np.linalg.norm(f, axis=-1, keepdims=True)
        out.append(np.where(n > 1e-9, f / np.where(n > 1e-9, n, 1.0), 0.0))
    return out[0], out[1]


def argmax_displacement(corr, L: int, tol: float = 1e-12):
    """Best displacement per location.

    Among channels within ``tol`` of the maximum the smallest displacement
    magnitude wins, then the earliest in row-major ``(du, dv)`` order.
    """
    disp = channel_displacements(L)
    mag = np.hypot(disp[:, 0], disp[:, 1])
    # channel order by (magnitude, row-major); stable sort keeps row-major for equal magnitude
    rank = np.argsort(mag, kind="stable")
    H, W = corr.shape[:2]
    r = np.arange(H)[:, None, None] + disp[None, None, :, 0]
    c = np.arange(W)[None, :, None] + disp[None, None, :, 1]
    # displacements leaving the image never win
    scores = np.where((r >= 0) & (r < H) & (c >= 0) & (c < W), corr, -np.inf)
    best = scores.max(axis=-1, keepdims=True)
    near = scores[..., rank] >= best - tol
    pick = rank[np.argmax(near, axis=-1)]
    return disp[pick]


def corr_flow_baseline(I_t, P_t, I_tm1, P_tm1, L: int = 4, cell: int = 4):
    """Coarse scene flow by argmax color matching on a cell grid.

    Returns ``(flow, displacement)``: flow ``(h, w, 3)`` is the matched cell's
    mean XYZ at t-1 minus the cell's mean XYZ at t; displacement ``(h, w, 2)``
    is the matched ``(du, dv)`` in cells.
    """
    f_t, f_tm1 = matching_features(I_t, I_tm1, cell)
    corr = correlate(f_t, f_tm1, L)
    disp = argmax_displacement(corr, L)
    X_t = cell_features(P_t, cell)
    X_tm1 = cell_features(P_tm1, cell)
    h, w = f_t.shape[:2]
    rows = np.arange(h)[:, None] + disp[..., 0]
    cols = np.arange(w)[None, :] + disp[..., 1]
    flow = X_tm1[rows, cols] - X_t
    return flow, disp
