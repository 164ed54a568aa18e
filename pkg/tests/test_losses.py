import numpy as np
import pytest
import torch

from ddnet.losses import (
    LossBreakdown,
    LossWeights,
    loss_coarse,
    loss_final,
    loss_lap,
    loss_total,
    ssim_channel,
    weighted_total,
)
from oracles import central_difference, ssim_direct

CLOSED_FORM_CONST_PAIR = 1e-4 / (0.25 + 1e-4)  # ssim of constants 0 and 0.5


class Out:
    def __init__(self, final, coarse, grad_pred):
        self.final = final
        self.coarse = coarse
        self.grad_pred = grad_pred


class Sample:
    def __init__(self, normal, grad_gt):
        self.normal = normal
        self.grad_gt = grad_gt


def test_loss_lap_values():
    gt = np.zeros((4, 4), dtype=np.float64)
    assert loss_lap(gt, gt) == 0.0
    assert loss_lap(gt + 1.0, gt) == pytest.approx(1.0, abs=1e-12)
    two = np.array([[3.0], [-1.0]])
    assert loss_lap(two, np.zeros((2, 1))) == pytest.approx(5.0, abs=1e-12)


def test_loss_lap_shape_errors():
    with pytest.raises(ValueError):
        loss_lap(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        loss_lap(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_loss_lap_monotone_in_perturbation_scale():
    rng = np.random.default_rng(10)
    gt = rng.random((8, 8))
    d = rng.standard_normal((8, 8))
    vals = [loss_lap(gt + t * d, gt) for t in (0.0, 0.25, 0.5, 1.0, 2.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert loss_lap(gt - 1.5 * d, gt) == pytest.approx(loss_lap(gt + 1.5 * d, gt), rel=1e-12)


def test_loss_coarse_values():
    rng = np.random.default_rng(11)
    gt = rng.random((6, 5, 3))
    assert loss_coarse(gt, gt) == 0.0
    assert loss_coarse(gt + 0.1, gt) == pytest.approx(0.03, abs=1e-12)
    single = gt.copy()
    single[2, 3, 1] += 1.0
    assert loss_coarse(single, gt) == pytest.approx(1.0 / 30.0, abs=1e-12)


def test_loss_coarse_shape_errors():
    with pytest.raises(ValueError):
        loss_coarse(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        loss_coarse(np.zeros((4, 4, 1)), np.zeros((4, 4, 1)))


def test_ssim_identity():
    x = np.random.default_rng(12).random((32, 32))
    assert ssim_channel(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_pair_closed_form():
    a = np.zeros((16, 16))
    b = np.full((16, 16), 0.5)
    assert ssim_channel(a, b) == pytest.approx(CLOSED_FORM_CONST_PAIR, abs=1e-12)
    assert ssim_channel(a, b) == pytest.approx(3.998e-4, abs=1e-6)
    # padded small-map branch must give the same constant
    assert ssim_channel(np.zeros((8, 8)), np.full((8, 8), 0.5)) == pytest.approx(
        CLOSED_FORM_CONST_PAIR, abs=1e-12
    )


def test_ssim_matches_direct_oracle():
    rng = np.random.default_rng(13)
    for _ in range(3):
        a = rng.random((32, 32))
        b = np.clip(a + 0.15 * rng.standard_normal((32, 32)), 0.0, 1.0)
        assert ssim_channel(a, b) == pytest.approx(ssim_direct(a, b), abs=1e-6)


def test_ssim_symmetry():
    rng = np.random.default_rng(14)
    a = rng.random((20, 24))
    b = rng.random((20, 24))
    assert ssim_channel(a, b) == pytest.approx(ssim_channel(b, a), abs=1e-15)


def test_ssim_range_and_small_maps():
    rng = np.random.default_rng(15)
    for shape in ((8, 8), (11, 11), (16, 40)):
        v = ssim_channel(rng.random(shape), rng.random(shape))
        assert -1.0 <= v <= 1.0


def test_ssim_rejects_multichannel():
    with pytest.raises(ValueError):
        ssim_channel(np.zeros((16, 16, 3)), np.zeros((16, 16, 3)))


def test_loss_final_fixed_point_and_range():
    rng = np.random.default_rng(16)
    img = rng.random((24, 24, 3))
    assert loss_final(img, img) == pytest.approx(0.0, abs=1e-9)
    for _ in range(3):
        v = loss_final(rng.random((16, 16, 3)), rng.random((16, 16, 3)))
        assert 0.0 <= v <= 2.0


def test_loss_final_constant_pair():
    a = np.zeros((16, 16, 3))
    b = np.full((16, 16, 3), 0.5)
    assert loss_final(a, b) == pytest.approx(1.0 - CLOSED_FORM_CONST_PAIR, abs=1e-12)
    assert loss_final(a, b) == pytest.approx(0.9996, abs=1e-4)


def test_loss_final_literal_sum_flag():
    img = np.random.default_rng(17).random((16, 16, 3))
    assert loss_final(img, img, literal_sum=True) == pytest.approx(-2.0, abs=1e-9)
    other = np.random.default_rng(18).random((16, 16, 3))
    mean_form = loss_final(img, other)
    sum_form = loss_final(img, other, literal_sum=True)
    assert sum_form == pytest.approx(1.0 - 3.0 * (1.0 - mean_form), abs=1e-12)


def test_weighted_total_worked_example():
    total = weighted_total(5.0, 0.03, 0.9996, LossWeights())
    assert total == pytest.approx(1.60576, abs=1e-9)


def test_loss_total_perfect_prediction():
    rng = np.random.default_rng(19)
    img = rng.random((16, 16, 3))
    grad = rng.standard_normal((16, 16, 1))
    bd = loss_total(Out(img, img, grad), Sample(img, grad), LossWeights())
    assert isinstance(bd, LossBreakdown)
    assert bd.lap == 0.0
    assert bd.coarse == 0.0
    assert bd.final == pytest.approx(0.0, abs=1e-9)
    assert bd.total == pytest.approx(0.0, abs=1e-9)


def test_loss_total_breakdown_arithmetic():
    rng = np.random.default_rng(20)
    out = Out(rng.random((16, 16, 3)), rng.random((16, 16, 3)), rng.standard_normal((16, 16, 1)))
    sample = Sample(rng.random((16, 16, 3)), rng.standard_normal((16, 16, 1)))
    w = LossWeights(0.3, 0.1, 0.6)
    bd = loss_total(out, sample, w)
    assert bd.total == weighted_total(bd.lap, bd.coarse, bd.final, w)
    only_final = loss_total(out, sample, LossWeights(0.0, 0.0, 1.0))
    assert only_final.total == only_final.final


def test_loss_total_ablated_branches():
    rng = np.random.default_rng(21)
    img = rng.random((16, 16, 3))
    sample = Sample(img, rng.standard_normal((16, 16, 1)))
    out = Out(rng.random((16, 16, 3)), None, None)
    bd = loss_total(out, sample, LossWeights(0.0, 0.0, 0.6))
    assert bd.lap == 0.0 and bd.coarse == 0.0
    with pytest.raises(ValueError):
        loss_total(out, sample, LossWeights())


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.2, 0.6)


def _torch_grad(fn, x_np):
    x = torch.from_numpy(x_np.copy()).requires_grad_(True)
    fn(x).backward()
    return x.grad.numpy()


def _max_rel_err(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def test_gradient_check_loss_lap():
    rng = np.random.default_rng(22)
    gt = rng.random((8, 8))
    x0 = rng.random((8, 8))
    analytic = _torch_grad(lambda x: loss_lap(x, torch.from_numpy(gt)), x0)
    numeric = central_difference(lambda x: loss_lap(x, gt), x0)
    assert _max_rel_err(analytic, numeric) < 1e-3


def test_gradient_check_loss_coarse():
    rng = np.random.default_rng(23)
    gt = rng.random((3, 8, 8))
    x0 = rng.random((3, 8, 8))
    analytic = _torch_grad(lambda x: loss_coarse(x, torch.from_numpy(gt)), x0)
    numeric = central_difference(
        lambda x: loss_coarse(np.moveaxis(x, 0, -1), np.moveaxis(gt, 0, -1)), x0
    )
    assert _max_rel_err(analytic, numeric) < 1e-3


def test_gradient_check_loss_final():
    rng = np.random.default_rng(24)
    gt = 0.2 + 0.6 * rng.random((3, 8, 8))
    x0 = 0.2 + 0.6 * rng.random((3, 8, 8))
    analytic = _torch_grad(lambda x: loss_final(x, torch.from_numpy(gt)), x0)
    numeric = central_difference(
        lambda x: loss_final(np.moveaxis(x, 0, -1), np.moveaxis(gt, 0, -1)), x0
    )
    assert _max_rel_err(analytic, numeric) < 1e-3


def test_losses_keep_torch_graph():
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
    gt = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    v = loss_final(x, gt)
    assert isinstance(v, torch.Tensor) and v.requires_grad
    v.backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()
