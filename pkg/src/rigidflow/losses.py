"""Training losses on prediction maps, their analytic gradients, and a direct fit.

All pixel-wise terms only look at ground-truth foreground pixels. Every loss
function returns its value together with gradients with respect to the
prediction maps it reads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .segment import trajectory_map

log = logging.getLogger(__name__)

SATURATED_LOGIT = 40.0
PRED_CHANNELS = {"Q": 3, "T": 3, "X": 3, "S": 3, "B": 1, "mask_logit": 1, "eta_logit": 1}
ATTRIBUTES = ("Q", "T", "X", "S", "B", "xi")


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_m: float = 1.0
    lambda_center: float = 1.0
    lambda_var: float = 0.1
    lambda_vio: float = 0.1
    lambda_Q: float = 0.1
    lambda_T: float = 100.0
    lambda_X: float = 10.0
    lambda_S: float = 10.0
    lambda_B: float = 1.0
    lambda_xi: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def attribute(self, name: str) -> float:
        return getattr(self, "lambda_" + name)

    def only(self, **kept) -> "LossWeights":
        """All weights zero except the given ones."""
        zero = {f.name: 0.0 for f in fields(self)}
        zero.update(kept)
        return LossWeights(**zero)


@dataclass
class PredictionMaps:
    Q: np.ndarray
    T: np.ndarray
    X: np.ndarray
    S: np.ndarray
    B: np.ndarray
    mask_logit: np.ndarray
    eta_logit: np.ndarray
    P: Optional[np.ndarray] = None  # input point cloud carried along for flow recomputation

    @property
    def shape(self):
        return self.Q.shape[:2]

    @property
    def xi(self):
        return trajectory_map(self.X, self.T)

    def params(self) -> dict:
        return {n: getattr(self, n) for n in PRED_CHANNELS}

    def as_dict(self) -> dict:
        d = self.params()
        if self.P is not None:
            d["P"] = self.P
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionMaps":
        missing = [n for n in PRED_CHANNELS if n not in d]
        if missing:
            raise KeyError(f"prediction archive lacks maps: {', '.join(missing)}")
        return cls(**{n: np.asarray(d[n], dtype=float) for n in PRED_CHANNELS}, P=d.get("P"))

    def copy(self) -> "PredictionMaps":
        return PredictionMaps(**{n: np.array(v, dtype=float) for n, v in self.params().items()},
                              P=None if self.P is None else np.array(self.P))

    @classmethod
    def from_ground_truth(cls, gt, logit: float = SATURATED_LOGIT) -> "PredictionMaps":
        """Oracle predictions: ground-truth values and saturated classification logits."""
        return cls(Q=np.array(gt.Q, float), T=np.array(gt.T, float), X=np.array(gt.X, float),
                   S=np.array(gt.S, float), B=np.array(gt.B, float),
                   mask_logit=np.where(gt.mask > 0.5, logit, -logit),
                   eta_logit=np.where(gt.eta > 0.5, logit, -logit),
                   P=np.array(gt.P, float))


@dataclass
class LossBreakdown:
    L_m: float
    L_center: float
    L_p: float
    L_var: float
    L_vio: float
    total: float
    L_p_terms: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "L_p_terms"}
        d.update({f"L_p_{k}": v for k, v in self.L_p_terms.items()})
        return d


# --------------------------------------------------------------------------
# helpers

def _fg(gt_mask):
    m = np.asarray(gt_mask)
    if m.ndim == 3:
        m = m[..., 0]
    return m > 0.5


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce(z, y):
    """Elementwise binary cross-entropy on logits, stable for large |z|."""
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def _norm_and_unit(r):
    n = np.linalg.norm(r, axis=-1)
    safe = np.where(n > 0.0, n, 1.0)
    with np.errstate(invalid="ignore"):  # inf residuals surface as a non-finite loss instead
        unit = np.where((n > 0.0)[..., None], r / safe[..., None], 0.0)
    return n, unit


# --------------------------------------------------------------------------
# individual terms

def mask_loss(logits, gt_mask):
    """Mean cross-entropy over all pixels; returns ``(loss, dloss/dlogits)``."""
    z = np.asarray(logits, dtype=float)
    y = (np.asarray(gt_mask, dtype=float) > 0.5).astype(float)
    n = z.size
    return float(_bce(z, y).sum() / n), (sigmoid(z) - y) / n


def center_loss(eta_logits, gt_eta, gt_mask):
    """Mean cross-entropy over ground-truth foreground; zero gradient elsewhere."""
    z = np.asarray(eta_logits, dtype=float)
    y = np.asarray(gt_eta, dtype=float)
    fg = _fg(gt_mask).reshape(z.shape[:2])
    grad = np.zeros_like(z)
    n = int(fg.sum())
    if n == 0:
        return 0.0, grad
    zf, yf = z[fg], y[fg]
    grad[fg] = (sigmoid(zf) - yf) / n
    return float(_bce(zf, yf).sum() / n), grad


def l2_term(pred, gt, fg):
    """Mean over foreground of the (unsquared) L2 residual norm, with gradient."""
    pred = np.asarray(pred, dtype=float)
    r = pred - np.asarray(gt, dtype=float)
    grad = np.zeros_like(pred)
    n = int(fg.sum())
    if n == 0:
        return 0.0, grad
    norm, unit = _norm_and_unit(r[fg])
    grad[fg] = unit / n
    return float(norm.sum() / n), grad


def pixelwise_loss(pred: PredictionMaps, gt, w: LossWeights):
    """Weighted sum of per-attribute L2 errors over the foreground.

    Returns ``(L_p, per-attribute unweighted values, gradients)``; the
    trajectory term feeds into both the X and T gradients.
    """
    fg = _fg(gt.mask)
    terms, grads = {}, {}
    total = 0.0
    for name in ("Q", "T", "X", "S", "B"):
        v, g = l2_term(getattr(pred, name), getattr(gt, name), fg)
        lam = w.attribute(name)
        terms[name] = v
        total += lam * v
        grads[name] = lam * g
    v, g = l2_term(pred.xi, trajectory_map(gt.X, gt.T), fg)
    terms["xi"] = v
    total += w.lambda_xi * v
    gX, gT = split_xi_grad(w.lambda_xi * g)
    grads["X"] = grads["X"] + gX
    grads["T"] = grads["T"] + gT
    return total, terms, grads


def split_xi_grad(g_xi):
    """Chain rule through ``xi = [X, X + T]``."""
    return g_xi[..., :3] + g_xi[..., 3:], g_xi[..., 3:]


def variance_loss(xi_hat, gt_labels):
    """Sum over objects of the mean squared deviation from the object's mean feature.

    The gradient is the full derivative; the dependence of each object's mean
    on its pixels contributes nothing because deviations sum to zero.
    """
    xi_hat = np.asarray(xi_hat, dtype=float)
    lab = np.asarray(gt_labels)
    if lab.ndim == 3:
        lab = lab[..., 0]
    grad = np.zeros_like(xi_hat)
    total = 0.0
    for k in np.unique(lab):
        if k <= 0:
            continue
        sel = lab == k
        v = xi_hat[sel]
        # offset from the first member keeps a constant group at exactly zero
        ref = v[0]
        dev = v - (ref + (v - ref).sum(axis=0) / len(v))
        n = len(v)
        total += float(np.sum(dev * dev) / n)
        grad[sel] = 2.0 * dev / n
    return total, grad


def violation_loss(xi_hat, xi_gt, B_gt, gt_mask):
    """Sum of residual norms over foreground pixels whose residual exceeds B/5."""
    xi_hat = np.asarray(xi_hat, dtype=float)
    fg = _fg(gt_mask)
    B = np.asarray(B_gt, dtype=float)
    if B.ndim == 3:
        B = B[..., 0]
    norm, unit = _norm_and_unit(xi_hat - np.asarray(xi_gt, dtype=float))
    active = fg & (norm > B / 5.0)
    grad = np.where(active[..., None], unit, 0.0)
    return float(norm[active].sum()), grad


def total_loss(pred: PredictionMaps, gt, w: LossWeights = LossWeights()):
    """Full weighted training loss and its gradient for every prediction map."""
    labels = gt.obj_id
    L_m, g_mask = mask_loss(pred.mask_logit, gt.mask)
    L_c, g_eta = center_loss(pred.eta_logit, gt.eta, gt.mask)
    L_p, terms, grads = pixelwise_loss(pred, gt, w)
    xi_hat = pred.xi
    L_var, g_var = variance_loss(xi_hat, labels)
    L_vio, g_vio = violation_loss(xi_hat, trajectory_map(gt.X, gt.T), gt.B, gt.mask)
    gX, gT = split_xi_grad(w.lambda_var * g_var + w.lambda_vio * g_vio)
    grads["X"] = grads["X"] + gX
    grads["T"] = grads["T"] + gT
    grads["mask_logit"] = w.lambda_m * g_mask
    grads["eta_logit"] = w.lambda_center * g_eta
    total = w.lambda_m * L_m + w.lambda_center * L_c + L_p + w.lambda_var * L_var + w.lambda_vio * L_vio
    bd = LossBreakdown(L_m, L_c, L_p, L_var, L_vio, total, terms)
    return bd, grads


# --------------------------------------------------------------------------
# direct fit

@dataclass
class FitResult:
    pred: PredictionMaps
    trace: list  # LossBreakdown per step, index 0 is the initial loss


def direct_fit(gt, init: PredictionMaps, steps: int = 500, step_size: float = 0.01,
               weights: LossWeights = LossWeights(), optimizer: str = "adam",
               betas=(0.9, 0.999), eps: float = 1e-8) -> FitResult:
    """Descend ``total_loss`` treating every prediction map as a free parameter.

    ``optimizer="adam"`` uses a constant learning rate ``step_size``;
    ``optimizer="sgd"`` is plain gradient descent with that step. The trace
    has ``steps + 1`` entries. Raises ``NonFiniteLoss`` when the loss blows up.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    pred = init.copy()
    b1, b2 = betas
    m = {k: np.zeros_like(v) for k, v in pred.params().items()}
    v2 = {k: np.zeros_like(v) for k, v in pred.params().items()}
    trace = []
    for i in range(steps + 1):
        bd, grads = total_loss(pred, gt, weights)
        if not math.isfinite(bd.total):
            bad = [k for k, val in bd.row().items() if not math.isfinite(val)]
            raise NonFiniteLoss(f"non-finite loss at step {i}: {', '.join(bad)}")
        trace.append(bd)
        if i == steps:
            break
        for k in PRED_CHANNELS:
            g = grads[k]
            if optimizer == "sgd":
                update = g
            else:
                m[k] = b1 * m[k] + (1 - b1) * g
                v2[k] = b2 * v2[k] + (1 - b2) * g * g
                update = (m[k] / (1 - b1 ** (i + 1))) / (np.sqrt(v2[k] / (1 - b2 ** (i + 1))) + eps)
            setattr(pred, k, getattr(pred, k) - step_size * update)
        if i % 100 == 0:
            log.debug("step %d total %.6g", i, bd.total)
    return FitResult(pred, trace)


def noisy_init(gt, sigma_xi: float, rng: np.random.Generator) -> PredictionMaps:
    """Ground truth with Gaussian noise on both halves of the trajectory feature, logits 0."""
    pred = PredictionMaps.from_ground_truth(gt)
    n_start = sigma_xi * rng.standard_normal(pred.X.shape)
    n_end = sigma_xi * rng.standard_normal(pred.X.shape)
    pred.X = pred.X + n_start
    pred.T = pred.T + n_end - n_start
    pred.mask_logit = np.zeros_like(pred.mask_logit)
    pred.eta_logit = np.zeros_like(pred.eta_logit)
    return pred
