"""Independent oracles and small fixtures shared by the tests."""

import math

import numpy as np

from rigidflow import geometry as geo
from rigidflow.losses import PRED_CHANNELS, PredictionMaps
from rigidflow.segment import recompute_flow, refine_rigid
from rigidflow.synth import PixelMaps, compute_boundary_radii, compute_centroid_labels

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record(n, title, ok, detail):
    ACCEPTANCE_LINES.append(f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, f"AC{n} {title}: {detail}"


def hat(w):
    x, y, z = w
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=float)


def expm_series(A, terms=40):
    """Matrix exponential by its power series (fine for |A| <= pi)."""
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def rotation_matrix_oracle(Q):
    return expm_series(hat(np.asarray(Q, float)))


def quat_rotate_oracle(q, p):
    """Rotate p by q via q * (0, p) * q^-1 written out by hand."""
    w, x, y, z = q
    def mul(a, b):
        return (a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0])
    r = mul(mul((w, x, y, z), (0.0, *p)), (w, -x, -y, -z))
    return np.array(r[1:])


def sets_equal(A, B, tol):
    """Brute-force nearest-neighbour set equality in both directions."""
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    return d.min(axis=1).max() <= tol and d.min(axis=0).max() <= tol


def c4_point_set(rng, n=12):
    """Random point set with exact quarter-turn symmetry about z."""
    base = rng.normal(size=(n, 3))
    pts = [base]
    for _ in range(3):
        x, y, z = pts[-1].T
        pts.append(np.stack([-y, x, z], axis=1))
    return np.concatenate(pts)


def brute_force_cluster(xi, B, eta, mask):
    """Plain-loop reference for the greedy sphere clustering."""
    H, W = mask.shape
    pix = [(r, c) for r in range(H) for c in range(W) if mask[r, c]]
    labels = np.zeros((H, W), dtype=int)
    k = 0
    while True:
        free = [p for p in pix if labels[p] == 0]
        if not free:
            break
        best = free[0]
        for p in free:
            if eta[p] > eta[best]:
                best = p
        k += 1
        labels[best] = k
        for p in free:
            if math.dist(xi[p], xi[best]) <= B[best]:
                labels[p] = k
    return labels


def brute_force_radii(xi_list, default=0.05):
    n = len(xi_list)
    if n == 1:
        return [default]
    out = []
    for i in range(n):
        best = math.inf
        for j in range(n):
            if i != j:
                acc = 0.0
                for a, b in zip(xi_list[i], xi_list[j]):
                    acc += (a - b) * (a - b)
                best = min(best, math.sqrt(acc))
        out.append(0.5 * best)
    return out


def random_gt(rng, H=8, W=8, K=3, D=3):
    """Small random ground-truth maps with K objects and consistent derived maps."""
    obj = np.zeros((H, W), dtype=np.int32)
    while len(np.unique(obj)) < K + 1:
        obj = rng.integers(0, K + 1, size=(H, W)).astype(np.int32)
    P = np.concatenate([rng.uniform(-0.3, 0.3, (H, W, 2)), rng.uniform(0.7, 1.1, (H, W, 1))], axis=-1)
    Q = np.zeros((H, W, 3))
    T = np.zeros((H, W, 3))
    X = np.zeros((H, W, 3))
    xi, centers = {}, {}
    for k in range(1, K + 1):
        sel = obj == k
        q = rng.normal(size=3) * 0.3
        t = rng.normal(size=3) * 0.08
        x = P[sel].mean(axis=0)
        Q[sel], T[sel], X[sel] = q, t, x
        xi[k] = np.concatenate([x, x + t])
        centers[k] = x
    mask = (obj > 0)[..., None].astype(float)
    _, S = geo.transport_point(P, Q, T, X)
    S *= mask
    B = compute_boundary_radii(obj, xi)
    eta = compute_centroid_labels(obj, P, centers, D)
    return PixelMaps(P=P, I=rng.random((H, W, 3)), Q=Q, T=T, X=X, S=S, mask=mask, B=B, eta=eta,
                     obj_id=obj[..., None], both=mask.copy())


def random_prediction(rng, gt, scale=0.05, vio_margin=1e-3):
    """Prediction at a smooth point: every residual nonzero, away from the violation threshold."""
    H, W = gt.shape
    pred = PredictionMaps(
        Q=gt.Q + scale * rng.normal(size=gt.Q.shape),
        T=gt.T + scale * rng.normal(size=gt.T.shape),
        X=gt.X + scale * rng.normal(size=gt.X.shape),
        S=gt.S + scale * rng.normal(size=gt.S.shape),
        B=gt.B + scale * rng.normal(size=gt.B.shape),
        mask_logit=rng.normal(size=(H, W, 1)) * 2,
        eta_logit=rng.normal(size=(H, W, 1)) * 2,
    )
    fg = gt.mask[..., 0] > 0.5
    xi_gt = np.concatenate([gt.X, gt.X + gt.T], axis=-1)
    for _ in range(100):
        r = np.linalg.norm(pred.xi - xi_gt, axis=-1)
        near = fg & (np.abs(r - gt.B[..., 0] / 5) < vio_margin)
        if not near.any():
            break
        pred.X[near] += scale * rng.normal(size=(int(near.sum()), 3))
    return pred


def finite_difference(fn, pred, h=1e-5):
    """Central differences of scalar ``fn(pred)`` for every entry of every prediction map."""
    grads = {}
    for name in PRED_CHANNELS:
        a = getattr(pred, name)
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn(pred)
            flat[i] = old - h
            fm = fn(pred)
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def _masked_epe(S, gt, sel):
    return float(np.linalg.norm(S[sel] - gt.S[sel], axis=-1).mean())


def refinement_trial(gt, rng, sigma=0.005):
    """Masked EPE before and after refinement with noisy T and oracle labels."""
    sel = gt.both[..., 0] > 0
    labels = gt.obj_id[..., 0]
    fg = labels > 0
    T_noisy = gt.T + sigma * rng.normal(size=gt.T.shape) * fg[..., None]
    _, before = geo.transport_point(gt.P, gt.Q, T_noisy, gt.X)
    before[~fg] = 0
    motions = refine_rigid(labels, gt.Q, T_noisy, gt.X)
    after = recompute_flow(labels, motions, gt.P)
    return _masked_epe(before, gt, sel), _masked_epe(after, gt, sel)
