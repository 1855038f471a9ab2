"""Differentiable operators and a finite-difference gradient checker.

The operators are thin, shape-checked wrappers over torch so that the
network and the checker share one definition of every op. Reverse-mode
gradients come from torch autograd; :func:`grad_check` verifies them against
central differences computed here, independently of autograd.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_DTYPE = torch.float32
CHECK_DTYPE = torch.float64


def _need(x: torch.Tensor, ndim: int, name: str):
    if x.dim() != ndim:
        raise ValueError(f"{name} expects a {ndim}-d tensor, got shape {tuple(x.shape)}")


def conv_out_size(n: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    _need(x, 4, "conv2d")
    _need(weight, 4, "conv2d weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, kernel {weight.shape[1]}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def conv3d(x, weight, bias=None, stride=1, padding=0):
    _need(x, 5, "conv3d")
    _need(weight, 5, "conv3d weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv3d channel mismatch: input {x.shape[1]}, kernel {weight.shape[1]}")
    return F.conv3d(x, weight, bias, stride=stride, padding=padding)


def conv_transpose3d(x, weight, bias=None, stride=2, padding=1, output_size=None):
    """Stride-2 transposed 3D convolution.

    ``output_size`` (D, H, W) selects the output padding so the result
    matches the extents of the tensor that was downsampled.
    """
    _need(x, 5, "conv_transpose3d")
    _need(weight, 5, "conv_transpose3d weight")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv_transpose3d channel mismatch: input {x.shape[1]}, kernel {weight.shape[0]}")
    k = weight.shape[2:]
    if output_size is None:
        output_padding = tuple(stride - 1 for _ in k)
    else:
        output_padding = []
        for n_in, n_out, kk in zip(x.shape[2:], output_size, k):
            op = n_out - ((n_in - 1) * stride - 2 * padding + kk)
            if not 0 <= op < stride:
                raise ValueError(f"cannot reach output extent {n_out} from {n_in} with stride {stride}")
            output_padding.append(op)
        output_padding = tuple(output_padding)
    return F.conv_transpose3d(x, weight, bias, stride=stride, padding=padding, output_padding=output_padding)


def upsample_bilinear(x, factor: int = 2):
    _need(x, 4, "upsample_bilinear")
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


def upsample_bilinear_2x(x):
    return upsample_bilinear(x, 2)


def batch_norm(x, running_mean, running_var, weight=None, bias=None, training=True, momentum=0.1, eps=1e-5):
    if x.shape[1] != running_mean.shape[0]:
        raise ValueError("batch_norm channel mismatch")
    return F.batch_norm(x, running_mean, running_var, weight, bias, training=training, momentum=momentum, eps=eps)


def mish(x):
    return F.mish(x)


def sigmoid(x):
    return torch.sigmoid(x)


def relu(x):
    return F.relu(x)


def tanh(x):
    return torch.tanh(x)


def softmax(x, axis: int):
    if not -x.dim() <= axis < x.dim():
        raise ValueError(f"softmax axis {axis} out of range for {x.dim()}-d input")
    return torch.softmax(x, dim=axis)


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a, b):
    _same_shape(a, b, "add")
    return a + b


def sub(a, b):
    _same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    _same_shape(a, b, "mul")
    return a * b


def abs(x):  # noqa: A001 - mirrors the operator name
    return torch.abs(x)


def log(x, mask=None):
    vals = x.detach() if mask is None else x.detach()[mask]
    if torch.any(vals <= 0):
        raise ValueError("log of a non-positive value")
    return torch.log(x)


def exp(x, mask=None):
    y = torch.exp(x)
    vals = y.detach() if mask is None else y.detach()[mask]
    if not torch.all(torch.isfinite(vals)):
        raise ValueError("exp overflow")
    return y


def sum(x, axis=None):  # noqa: A001
    return x.sum() if axis is None else x.sum(dim=axis)


def mean(x, axis=None):
    return x.mean() if axis is None else x.mean(dim=axis)


def concatenate(tensors: Sequence[torch.Tensor], axis: int):
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.dim() != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ValueError("concatenate: shapes differ outside the concatenation axis")
    return torch.cat(list(tensors), dim=axis)


# -- gradient checking ---------------------------------------------------------


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _scalarize(out, weights):
    outs = out if isinstance(out, (tuple, list)) else (out,)
    return torch.stack([(w * o).sum() for w, o in zip(weights, outs)]).sum()


def grad_check(
    fn: Callable,
    inputs: Sequence,
    *,
    step: float = 1e-3,
    seed: int = 0,
    wrt: Sequence[int] | None = None,
    max_checks: int | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` maps tensors to a tensor (or a tuple of tensors). A random linear
    functional ``sum(r * fn(x))`` with fixed-seed weights reduces the output
    to a scalar; its gradient w.r.t. every checked input element is compared
    against ``(L(x + h) - L(x - h)) / 2h`` in float64. ``max_checks`` caps
    the number of sampled coordinates per input for large inputs.
    """
    gen = torch.Generator().manual_seed(seed)
    xs = [torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x).detach().to(CHECK_DTYPE).clone()
          for x in inputs]
    wrt = list(range(len(xs))) if wrt is None else list(wrt)
    for i in wrt:
        xs[i].requires_grad_(True)

    out = fn(*xs)
    outs = out if isinstance(out, (tuple, list)) else (out,)
    weights = [torch.randn(o.shape, generator=gen, dtype=CHECK_DTYPE) for o in outs]
    loss = _scalarize(out, weights)
    grads = torch.autograd.grad(loss, [xs[i] for i in wrt], allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        base = [x.detach().clone() for x in xs]
        for i, g in zip(wrt, grads):
            g = torch.zeros_like(base[i]) if g is None else g
            flat = base[i].reshape(-1)
            n = flat.numel()
            idx = np.arange(n)
            if max_checks is not None and n > max_checks:
                idx = np.random.default_rng(seed + i).choice(n, size=max_checks, replace=False)
            for k in idx:
                orig = flat[k].item()
                flat[k] = orig + step
                lp = _scalarize(fn(*base), weights).item()
                flat[k] = orig - step
                lm = _scalarize(fn(*base), weights).item()
                flat[k] = orig
                fd = (lp - lm) / (2 * step)
                worst = max(worst, float(relative_error(g.reshape(-1)[k].item(), fd)))
    return worst


def _rand(gen, *shape, low=-1.0, high=1.0):
    return low + (high - low) * torch.rand(*shape, generator=gen, dtype=CHECK_DTYPE)


def operator_suite(seed: int = 0) -> dict[str, tuple[Callable, list]]:
    """Small randomized cases for every operator, keyed by operator name."""
    g = torch.Generator().manual_seed(seed)
    pos = _rand(g, 3, 4, low=0.5, high=2.0)
    away = torch.sign(_rand(g, 3, 4)) * _rand(g, 3, 4, low=0.2, high=1.0)  # kinks avoided
    bn_mean = torch.zeros(3, dtype=CHECK_DTYPE)
    bn_var = torch.ones(3, dtype=CHECK_DTYPE)
    return {
        "conv2d": (lambda x, w, b: conv2d(x, w, b, stride=1, padding=1),
                   [_rand(g, 2, 3, 5, 5), _rand(g, 4, 3, 3, 3), _rand(g, 4)]),
        "conv2d_stride2": (lambda x, w: conv2d(x, w, stride=2, padding=1),
                           [_rand(g, 1, 2, 6, 6), _rand(g, 3, 2, 3, 3)]),
        "conv3d": (lambda x, w, b: conv3d(x, w, b, stride=1, padding=1),
                   [_rand(g, 2, 3, 4, 4, 4), _rand(g, 2, 3, 3, 3, 3), _rand(g, 2)]),
        "conv3d_stride2": (lambda x, w: conv3d(x, w, stride=2, padding=1),
                           [_rand(g, 1, 2, 4, 4, 4), _rand(g, 2, 2, 3, 3, 3)]),
        "conv_transpose3d": (lambda x, w: conv_transpose3d(x, w, stride=2, padding=1, output_size=(4, 4, 4)),
                             [_rand(g, 1, 2, 2, 2, 2), _rand(g, 2, 3, 3, 3, 3)]),
        "upsample_bilinear_2x": (upsample_bilinear_2x, [_rand(g, 1, 2, 3, 4)]),
        "batch_norm_train": (lambda x, w, b: batch_norm(x, bn_mean.clone(), bn_var.clone(), w, b, training=True),
                             [_rand(g, 4, 3, 2, 2), _rand(g, 3, low=0.5, high=1.5), _rand(g, 3)]),
        "batch_norm_eval": (lambda x, w, b: batch_norm(x, bn_mean + 0.1, bn_var + 0.5, w, b, training=False),
                            [_rand(g, 4, 3, 2, 2), _rand(g, 3, low=0.5, high=1.5), _rand(g, 3)]),
        "mish": (mish, [_rand(g, 3, 4, low=-3, high=3)]),
        "sigmoid": (sigmoid, [_rand(g, 3, 4, low=-3, high=3)]),
        "sigmoid_saturated": (sigmoid, [torch.tensor([-20.0, 20.0, -19.5, 19.5], dtype=CHECK_DTYPE)]),
        "relu": (relu, [away.clone()]),
        "tanh": (tanh, [_rand(g, 3, 4, low=-2, high=2)]),
        "softmax": (lambda x: softmax(x, axis=1), [_rand(g, 2, 5, 3, low=-2, high=2)]),
        "add": (add, [_rand(g, 3, 4), _rand(g, 3, 4)]),
        "sub": (sub, [_rand(g, 3, 4), _rand(g, 3, 4)]),
        "mul": (mul, [_rand(g, 3, 4), _rand(g, 3, 4)]),
        "abs": (abs, [away.clone()]),
        "log": (log, [pos.clone()]),
        "exp": (exp, [_rand(g, 3, 4, low=-2, high=2)]),
        "sum": (lambda x: sum(x, axis=1), [_rand(g, 3, 4)]),
        "mean": (lambda x: mean(x, axis=0), [_rand(g, 3, 4)]),
        "concatenate": (lambda a, b: concatenate([a, b], axis=1), [_rand(g, 2, 3), _rand(g, 2, 2)]),
    }


def check_all_operators(seed: int = 0) -> dict[str, float]:
    return {name: grad_check(fn, args, seed=seed) for name, (fn, args) in operator_suite(seed).items()}
