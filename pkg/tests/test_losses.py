import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from spikedepth.losses import (LossWeights, disparity_loss, silog_depth_loss, smooth_l1, total_loss,
                               uncertainty_loss)

D = torch.float64


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def test_smooth_l1_pieces():
    x = t([-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.5])
    assert torch.allclose(smooth_l1(x), t([2.5, 0.5, 0.125, 0.0, 0.125, 0.5, 2.0]))


def test_disparity_loss_weight_sum_fixture():
    gt = t([[1.0, 2.0], [3.0, 4.0]])
    pred = gt + 3.0  # every pixel: smooth_l1(3) = 2.5
    loss = disparity_loss([pred, pred, pred], gt)
    assert loss.item() == 2.2 * 2.5


def test_disparity_loss_weights_each_output():
    gt = t([0.0, 0.0])
    preds = [gt + 0.5, gt + 2.0, gt + 4.0]
    expected = 0.5 * 0.125 + 0.7 * 1.5 + 1.0 * 3.5
    assert disparity_loss(preds, gt).item() == pytest.approx(expected, abs=1e-15)


def test_disparity_loss_mask_and_errors():
    gt = t([1.0, np.nan, 5.0])
    pred = t([2.0, 100.0, 5.0])
    assert disparity_loss([pred], gt, weights=LossWeights(alpha=(1.0,))).item() == pytest.approx(0.25)
    with pytest.raises(ValueError):
        disparity_loss([pred, pred], gt)
    with pytest.raises(ValueError):
        disparity_loss([pred] * 3, t([np.nan] * 3))
    with pytest.raises(ValueError):
        LossWeights(alpha=(0.5, 0.0, 1.0))


def test_silog_fixtures():
    gt = t([1.0, 10.0, 100.0])
    assert silog_depth_loss(gt.clone(), gt).item() == pytest.approx(0.1, abs=1e-15)
    assert silog_depth_loss(t([7.0]), t([2.0])).item() == pytest.approx(0.1, abs=1e-15)
    c = np.log([1.0, 10.0, 100.0]) - np.log([2.0, 5.0, 300.0])
    ref = (c ** 2).mean() - c.mean() ** 2 + 0.1
    assert silog_depth_loss(t([2.0, 5.0, 300.0]), gt).item() == pytest.approx(ref, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 500), st.floats(0.1, 500)), min_size=1, max_size=30),
       st.floats(1e-3, 1e3))
def test_silog_scale_invariance(pairs, k):
    pred, gt = t([p for p, _ in pairs]), t([g for _, g in pairs])
    assert abs(silog_depth_loss(k * pred, gt).item() - silog_depth_loss(pred, gt).item()) <= 1e-6


def test_silog_batch_is_per_sample():
    g = torch.Generator().manual_seed(0)
    gt = 1 + 99 * torch.rand(3, 4, 5, generator=g, dtype=D)
    pred = 1 + 99 * torch.rand(3, 4, 5, generator=g, dtype=D)
    scale = t([1.0, 3.0, 0.2])[:, None, None]
    per = torch.stack([silog_depth_loss(p, q) for p, q in zip(pred, gt)]).mean()
    assert silog_depth_loss(pred, gt).item() == pytest.approx(per.item(), rel=1e-12)
    assert silog_depth_loss(pred * scale, gt).item() == pytest.approx(per.item(), rel=1e-9)


def test_silog_rejects_non_positive():
    with pytest.raises(ValueError):
        silog_depth_loss(t([0.0, 1.0]), t([1.0, 1.0]))
    with pytest.raises(ValueError):
        silog_depth_loss(t([1.0]), t([np.nan]))


@pytest.mark.parametrize("err", [0.01, 0.05, 0.3, 0.75])
def test_uncertainty_minimiser_is_abs_error(err):
    grid = np.arange(1e-3, 0.999, 1e-4)
    pred, gt = t([0.5 + err]), t([0.5])
    losses = [uncertainty_loss(pred, gt, t([s])).item() for s in grid]
    assert abs(grid[int(np.argmin(losses))] - err) <= 1e-3


def test_uncertainty_loss_value_and_range():
    pred, gt, s = t([0.2, 0.4]), t([0.3, 0.1]), t([0.5, 0.25])
    ref = np.mean(np.log([0.5, 0.25]) + np.array([0.1, 0.3]) / np.array([0.5, 0.25]))
    assert uncertainty_loss(pred, gt, s).item() == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        uncertainty_loss(pred, gt, t([0.5, 1.0]))
    uncertainty_loss(pred, gt, t([0.5, 1.0]), check_range=False)


def test_total_loss_modes():
    parts = {k: t(v) for k, v in dict(loss_disp=1.5, loss_depth=0.25, loss_mono_unc=-0.5, loss_ster_unc=0.125).items()}
    base, b = total_loss("base", parts)
    ugdf, u = total_loss("ugdf", parts)
    assert base.item() == 1.75 and b == {"loss_disp": 1.5, "loss_depth": 0.25, "total": 1.75}
    assert ugdf.item() == 1.375
    assert set(u) - set(b) == {"loss_mono_unc", "loss_ster_unc"}
    with pytest.raises(ValueError):
        total_loss("fancy", parts)


def test_losses_are_differentiable_through_the_mask():
    gt = t([2.0, np.nan, 4.0])
    pred = t([1.0, 7.0, 5.0]).requires_grad_()
    silog_depth_loss(pred, gt).backward()
    assert torch.all(torch.isfinite(pred.grad)) and pred.grad[1] == 0
