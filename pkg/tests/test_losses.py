import math

import numpy as np
import pytest

from rigidflow.losses import (LossWeights, NonFiniteLoss, PRED_CHANNELS, PredictionMaps, center_loss, direct_fit,
                              mask_loss, noisy_init, pixelwise_loss, total_loss, variance_loss, violation_loss)
from rigidflow.segment import trajectory_map
from _helpers import finite_difference, max_rel_err, random_gt, random_prediction

TOL = 1e-4


def _check_grad(fn_value, grads, pred, names=None):
    numeric = finite_difference(fn_value, pred)
    for name in names or PRED_CHANNELS:
        err = max_rel_err(grads[name], numeric[name])
        assert err < TOL, f"{name}: rel err {err:.3g}"


def test_mask_loss_values():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    v, _ = mask_loss(np.zeros((2, 2)), y)
    assert v == pytest.approx(math.log(2), abs=1e-15)
    v, _ = mask_loss(np.where(y > 0, 40.0, -40.0), y)
    assert v < 1e-15


def test_mask_loss_stable_for_huge_logits():
    v, g = mask_loss(np.array([[1e4, -1e4]]), np.array([[0.0, 1.0]]))
    assert v == pytest.approx(1e4) and np.isfinite(g).all()


def test_mask_loss_gradient(rng):
    z = rng.normal(size=(6, 6, 1)) * 3
    y = (rng.random((6, 6, 1)) > 0.5).astype(float)
    _, g = mask_loss(z, y)
    h = 1e-5
    num = np.zeros_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp.reshape(-1)[i] += h
        zm.reshape(-1)[i] -= h
        num.reshape(-1)[i] = (mask_loss(zp, y)[0] - mask_loss(zm, y)[0]) / (2 * h)
    assert max_rel_err(g, num) < TOL


def test_center_loss_values():
    mask = np.array([[1.0, 1.0, 0.0]])
    eta = np.array([[1.0, 0.0, 0.0]])
    v, g = center_loss(np.zeros((1, 3)), eta, mask)
    assert v == pytest.approx(math.log(2), abs=1e-15)
    assert g[0, 2] == 0
    v, _ = center_loss(np.array([[40.0, -40.0, 123.0]]), eta, mask)
    assert v < 1e-15


def test_center_loss_empty_foreground():
    v, g = center_loss(np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    assert v == 0 and np.all(g == 0)


def test_pixelwise_single_pixel_translation():
    rng = np.random.default_rng(1)
    gt = random_gt(rng, 4, 4, K=1)
    gt.mask[:] = 0
    gt.mask[1, 2] = 1
    pred = PredictionMaps.from_ground_truth(gt)
    pred.T[1, 2] += [0.03, 0, 0]
    w = LossWeights()
    L_p, terms, _ = pixelwise_loss(pred, gt, w)
    # T and the trajectory's end point are both off by 3 cm
    assert w.lambda_T * terms["T"] == pytest.approx(3.0, abs=1e-12)
    L_T_only, _, _ = pixelwise_loss(pred, gt, w.only(lambda_T=w.lambda_T))
    assert L_T_only == pytest.approx(3.0, abs=1e-12)


def test_pixelwise_zero_at_gt(rng):
    gt = random_gt(rng)
    L_p, _, grads = pixelwise_loss(PredictionMaps.from_ground_truth(gt), gt, LossWeights())
    assert L_p == 0
    for g in grads.values():
        assert np.all(g == 0)


def test_pixelwise_ignores_background(rng):
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    base, _, grads = pixelwise_loss(pred, gt, LossWeights())
    bg = gt.mask[..., 0] == 0
    for name in ("Q", "T", "X", "S", "B"):
        getattr(pred, name)[bg] += 7.0
        assert np.all(grads[name][bg] == 0)
    assert pixelwise_loss(pred, gt, LossWeights())[0] == base


def test_variance_two_pixels():
    delta = np.array([0.01, -0.02, 0.03, 0.0, 0.04, 0.005])
    m = np.arange(6) * 0.1
    xi = np.stack([m + delta, m - delta])[None]
    v, _ = variance_loss(xi, np.array([[1, 1]]))
    assert v == pytest.approx(float(delta @ delta), rel=1e-12)


def test_variance_zero_when_constant_per_object(rng):
    xi = np.zeros((3, 4, 6))
    lab = np.array([[1, 1, 2, 2]] * 3)
    xi[lab == 1] = rng.normal(size=6)
    xi[lab == 2] = rng.normal(size=6)
    v, g = variance_loss(xi, lab)
    assert v == 0 and np.all(g == 0)


def test_violation_examples():
    B = np.array([[1.0]])
    mask = np.array([[1.0]])
    zero = np.zeros((1, 1, 6))
    v, _ = violation_loss(np.array([[[0.3, 0, 0, 0, 0, 0]]]), zero, B, mask)
    assert v == pytest.approx(0.3)
    v, g = violation_loss(np.array([[[0.1, 0, 0, 0, 0, 0]]]), zero, B, mask)
    assert v == 0 and np.all(g == 0)


def test_total_zero_at_saturated_gt(rng):
    gt = random_gt(rng)
    bd, _ = total_loss(PredictionMaps.from_ground_truth(gt), gt)
    assert 0 <= bd.total < 1e-15


def test_only_mask_weight_gives_mask_loss(rng):
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    w = LossWeights().only(lambda_m=LossWeights().lambda_m)
    bd, _ = total_loss(pred, gt, w)
    assert bd.total == pytest.approx(w.lambda_m * bd.L_m, rel=1e-15)


def test_total_nonnegative_and_order_invariant(rng):
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    bd, _ = total_loss(pred, gt)
    assert bd.total > 0
    # transpose both maps: same pixels, different iteration order
    def tr(a):
        return np.ascontiguousarray(np.swapaxes(a, 0, 1))
    gt_t = type(gt)(**{k: tr(v) for k, v in gt.as_dict().items()})
    pred_t = PredictionMaps(**{k: tr(getattr(pred, k)) for k in PRED_CHANNELS})
    assert total_loss(pred_t, gt_t)[0].total == pytest.approx(bd.total, rel=1e-12)


def test_background_prediction_values_do_not_matter(rng):
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    base, _ = total_loss(pred, gt)
    bg = gt.mask[..., 0] == 0
    for name in ("Q", "T", "X", "S", "B", "eta_logit"):
        getattr(pred, name)[bg] = rng.normal(size=getattr(pred, name)[bg].shape)
    assert total_loss(pred, gt)[0].total == pytest.approx(base.total, rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_term_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    w = LossWeights()
    xi_gt = trajectory_map(gt.X, gt.T)
    labels = gt.obj_id

    _, _, g = pixelwise_loss(pred, gt, w)
    _check_grad(lambda p: pixelwise_loss(p, gt, w)[0], g, pred, ["Q", "T", "X", "S", "B"])

    def via_xi(fn):
        def value(p):
            return fn(p.xi)[0]
        _, gx = fn(pred.xi)
        return value, {"X": gx[..., :3] + gx[..., 3:], "T": gx[..., 3:]}

    value, g = via_xi(lambda xi: variance_loss(xi, labels))
    _check_grad(value, g, pred, ["X", "T"])
    value, g = via_xi(lambda xi: violation_loss(xi, xi_gt, gt.B, gt.mask))
    _check_grad(value, g, pred, ["X", "T"])

    _, g = center_loss(pred.eta_logit, gt.eta, gt.mask)
    _check_grad(lambda p: center_loss(p.eta_logit, gt.eta, gt.mask)[0], {"eta_logit": g}, pred, ["eta_logit"])


def test_total_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    _, grads = total_loss(pred, gt)
    _check_grad(lambda p: total_loss(p, gt)[0].total, grads, pred)


def test_violation_gradient_nonzero_in_check():
    # guard that the finite-difference checks actually exercise the violation term
    rng = np.random.default_rng(100)
    gt = random_gt(rng)
    pred = random_prediction(rng, gt)
    v, g = violation_loss(pred.xi, trajectory_map(gt.X, gt.T), gt.B, gt.mask)
    assert v > 0 and np.abs(g).max() > 0


def test_direct_fit_from_gt_stays_at_zero(rng):
    gt = random_gt(rng)
    res = direct_fit(gt, PredictionMaps.from_ground_truth(gt), steps=20)
    assert len(res.trace) == 21
    assert max(bd.total for bd in res.trace) < 1e-15


def test_direct_fit_zero_step_keeps_predictions(rng):
    gt = random_gt(rng)
    init = random_prediction(rng, gt)
    for opt in ("adam", "sgd"):
        res = direct_fit(gt, init, steps=5, step_size=0.0, optimizer=opt)
        for k in PRED_CHANNELS:
            np.testing.assert_array_equal(getattr(res.pred, k), getattr(init, k))


def test_direct_fit_decreases_loss(rng):
    gt = random_gt(rng, 12, 12)
    init = noisy_init(gt, 0.02, rng)
    res = direct_fit(gt, init, steps=200)
    assert res.trace[-1].total < 0.2 * res.trace[0].total


def test_direct_fit_reports_non_finite(rng):
    gt = random_gt(rng)
    init = random_prediction(rng, gt)
    init.S[gt.mask[..., 0] > 0] = np.inf
    with pytest.raises(NonFiniteLoss, match="step 0"):
        direct_fit(gt, init, steps=2)


def test_direct_fit_rejects_bad_arguments(rng):
    gt = random_gt(rng)
    init = PredictionMaps.from_ground_truth(gt)
    with pytest.raises(ValueError):
        direct_fit(gt, init, steps=0)
    with pytest.raises(ValueError):
        direct_fit(gt, init, optimizer="lbfgs")


def test_noisy_init_statistics():
    rng = np.random.default_rng(0)
    gt = random_gt(rng, 40, 40, K=2)
    init = noisy_init(gt, 0.02, rng)
    fg = gt.mask[..., 0] > 0
    d = init.xi[fg] - gt.xi[fg]
    assert abs(d.std() - 0.02) < 0.002
    assert np.all(init.mask_logit == 0) and np.all(init.eta_logit == 0)
    np.testing.assert_array_equal(init.S, gt.S)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_T=-1.0)
