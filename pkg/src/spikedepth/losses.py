"""Training objectives.

Stereo branch: weighted smooth-L1 over all hourglass outputs. Monocular
branch: scale-invariant log depth loss. Both branches: Laplace negative
log-likelihood with a predicted scale. All losses average over a validity
mask so NaN ground truth never reaches a gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .net import SIGMA_MAX, SIGMA_MIN


@dataclass(frozen=True)
class LossWeights:
    alpha: tuple = (0.5, 0.7, 1.0)
    eta: float = 0.1

    def __post_init__(self):
        if not self.alpha or any(a <= 0 for a in self.alpha):
            raise ValueError("hourglass weights must be positive")


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax < 1, 0.5 * x * x, ax - 0.5)


def _mask(gt, mask):
    m = torch.isfinite(gt)
    if mask is not None:
        m = m & mask.bool()
    return m


def disparity_loss(preds, gt, mask=None, weights: LossWeights = LossWeights()) -> torch.Tensor:
    if len(preds) != len(weights.alpha):
        raise ValueError(f"{len(preds)} predictions but {len(weights.alpha)} weights")
    m = _mask(gt, mask)
    n = m.sum()
    if n == 0:
        raise ValueError("disparity_loss: empty validity mask")
    g = gt[m]
    total = sum(a * smooth_l1(g - p[m]).sum() for a, p in zip(weights.alpha, preds))
    return total / n


def silog_depth_loss(pred, gt, mask=None, eta: float = 0.1) -> torch.Tensor:
    """``mean(c^2) - mean(c)^2 + eta`` with ``c = log gt - log pred``.

    A leading batch dimension (3-d input) is treated per sample and the
    per-sample losses are averaged.
    """
    m = _mask(gt, mask)
    if pred.dim() == 3:
        return torch.stack([silog_depth_loss(p, g, mm, eta) for p, g, mm in zip(pred, gt, m)]).mean()
    n = m.sum()
    if n == 0:
        raise ValueError("silog_depth_loss: empty validity mask")
    p, g = pred[m], gt[m]
    if torch.any(p.detach() <= 0) or torch.any(g <= 0):
        raise ValueError("silog_depth_loss: non-positive depth at a valid pixel")
    c = torch.log(g) - torch.log(p)
    return (c * c).sum() / n - c.sum() ** 2 / n ** 2 + eta


def uncertainty_loss(pred, gt, sigma, mask=None, check_range: bool = True) -> torch.Tensor:
    """Laplace NLL without constants: ``mean(log sigma + |pred - gt| / sigma)``."""
    m = _mask(gt, mask)
    if m.sum() == 0:
        raise ValueError("uncertainty_loss: empty validity mask")
    s = sigma[m]
    if check_range:
        sd = s.detach()
        if torch.any(sd < SIGMA_MIN * (1 - 1e-6)) or torch.any(sd > SIGMA_MAX * (1 + 1e-6)):
            raise ValueError("uncertainty_loss: sigma outside its clamp range")
    return (torch.log(s) + (pred[m] - gt[m]).abs() / s).mean()


def total_loss(mode: str, parts: dict) -> tuple[torch.Tensor, dict]:
    """Combine per-branch losses.

    ``base``: ``loss_disp + loss_depth``. ``ugdf``: base plus both
    uncertainty terms. Returns the total and a float breakdown that includes
    the total itself.
    """
    if mode not in ("base", "ugdf"):
        raise ValueError(f"unknown loss mode {mode!r}")
    keys = ["loss_disp", "loss_depth"]
    if mode == "ugdf":
        keys += ["loss_mono_unc", "loss_ster_unc"]
    total = parts[keys[0]]
    for k in keys[1:]:
        total = total + parts[k]
    breakdown = {k: float(parts[k].detach()) for k in keys}
    breakdown["total"] = float(total.detach())
    return total, breakdown
