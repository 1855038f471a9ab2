"""Bias-corrected Adam and the step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@torch.no_grad()
def adam_step(params, grads, state: AdamState):
    """One Adam update, applied to ``params`` in place.

    ``grads`` entries may be None (parameter untouched by the loss), which is
    treated as a zero gradient. Returns ``(params, state)``.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [torch.zeros_like(p) for p in params]
        state.second_moment = [torch.zeros_like(p) for p in params]
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step_count
    c2 = 1 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.epsilon))
    return params, state


def step_lr(epoch: int, base: float = 1e-3, decayed: float = 0.33e-3, milestone: int = 35) -> float:
    return base if epoch < milestone else decayed
