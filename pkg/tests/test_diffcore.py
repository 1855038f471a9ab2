import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from spikedepth import ops
from spikedepth.ops import check_all_operators, conv_out_size, grad_check, operator_suite, relative_error
from spikedepth.optim import AdamState, adam_step, step_lr

D = torch.float64


def test_fixed_points():
    z = torch.zeros(3, dtype=D)
    assert torch.all(ops.mish(z) == 0)
    assert torch.all(ops.sigmoid(z) == 0.5)
    assert torch.allclose(ops.softmax(torch.zeros(4, dtype=D), axis=0), torch.full((4,), 0.25, dtype=D))


def test_conv2d_hand_sum():
    y = ops.conv2d(torch.ones(1, 1, 3, 3), torch.ones(1, 1, 3, 3), padding=1)
    assert y[0, 0, 1, 1] == 9 and y[0, 0, 0, 0] == 4


def test_conv2d_matches_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    y = ops.conv2d(torch.from_numpy(x), torch.from_numpy(w), stride=2, padding=1).numpy()
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, conv_out_size(5, 3, 2, 1), conv_out_size(6, 3, 2, 1)))
    for o in range(3):
        for i in range(ref.shape[2]):
            for j in range(ref.shape[3]):
                ref[0, o, i, j] = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum()
    assert np.allclose(y, ref)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.sampled_from([1, 3, 5]), st.sampled_from([1, 2]), st.integers(0, 2))
def test_conv_shape_arithmetic(n, k, stride, pad):
    if n + 2 * pad < k:
        return
    x = torch.zeros(1, 1, n, n, n)
    y = ops.conv3d(x, torch.zeros(1, 1, k, k, k), stride=stride, padding=pad)
    assert y.shape[-1] == (n + 2 * pad - k) // stride + 1 == conv_out_size(n, k, stride, pad)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 8, 9])
def test_transposed_conv_inverts_stride2_extent(n):
    x = torch.zeros(1, 1, n, n + 1, n + 2)
    w = torch.zeros(1, 1, 3, 3, 3)
    down = ops.conv3d(x, w, stride=2, padding=1)
    up = ops.conv_transpose3d(down, w, output_size=x.shape[2:])
    assert up.shape[2:] == x.shape[2:]


def test_shape_errors():
    with pytest.raises(ValueError):
        ops.conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 3, 3))
    with pytest.raises(ValueError):
        ops.add(torch.zeros(2), torch.zeros(3))
    with pytest.raises(ValueError):
        ops.softmax(torch.zeros(2, 2), axis=2)
    with pytest.raises(ValueError):
        ops.concatenate([torch.zeros(2, 2), torch.zeros(3, 2)], axis=1)
    with pytest.raises(ValueError):
        ops.log(torch.tensor([1.0, 0.0]))
    with pytest.raises(ValueError):
        ops.exp(torch.tensor([1000.0]))
    # masked-out pixels do not trigger domain errors
    ops.log(torch.tensor([1.0, 0.0]), mask=torch.tensor([True, False]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_is_a_distribution(seed):
    x = torch.randn(3, 7, 2, generator=torch.Generator().manual_seed(seed), dtype=D) * 10
    p = ops.softmax(x, axis=1)
    assert torch.all(p >= 0)
    assert torch.allclose(p.sum(dim=1), torch.ones(3, 2, dtype=D), atol=1e-6)


def test_batch_norm_eval_is_affine():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(4, 3, 2, 2, generator=g, dtype=D)
    mean, var = torch.rand(3, generator=g, dtype=D), 0.5 + torch.rand(3, generator=g, dtype=D)
    w, b = torch.rand(3, generator=g, dtype=D), torch.rand(3, generator=g, dtype=D)
    y = ops.batch_norm(x, mean.clone(), var.clone(), w, b, training=False)
    ref = (x - mean[:, None, None]) / torch.sqrt(var[:, None, None] + 1e-5) * w[:, None, None] + b[:, None, None]
    assert torch.allclose(y, ref)
    assert torch.equal(y, ops.batch_norm(x, mean.clone(), var.clone(), w, b, training=False))


def test_relative_error_definition():
    assert relative_error(1.0, 1.0) == 0
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_linear_op_is_exact():
    g = torch.Generator().manual_seed(1)
    assert grad_check(ops.add, [torch.randn(3, 4, generator=g), torch.randn(3, 4, generator=g)]) <= 1e-10


@pytest.mark.parametrize("name", sorted(operator_suite()))
def test_operator_gradients(name):
    fn, args = operator_suite(0)[name]
    assert grad_check(fn, args, seed=0) <= 1e-4


def test_saturated_sigmoid_has_no_overflow():
    x = torch.tensor([-20.0, 20.0], dtype=D)
    assert torch.all(torch.isfinite(ops.sigmoid(x)))
    assert grad_check(ops.sigmoid, [x]) <= 1e-4


def test_checker_flags_a_wrong_backward():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x ** 3

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 2 * x ** 2  # should be 3 x^2

    x = torch.linspace(0.5, 1.5, 5, dtype=D)
    assert grad_check(Wrong.apply, [x]) > 0.3
    assert grad_check(lambda t: t ** 3, [x]) <= 1e-5


def test_checker_samples_coordinates():
    calls = []

    def fn(x):
        calls.append(1)
        return x * 2

    grad_check(fn, [torch.zeros(100, dtype=D)], max_checks=5)
    assert len(calls) == 1 + 2 * 5


def test_all_operators_helper():
    errors = check_all_operators(0)
    assert set(errors) == set(operator_suite())
    assert max(errors.values()) <= 1e-4


# -- Adam --------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = [torch.randn(3, 2)]
    before = p[0].clone()
    adam_step(p, [torch.zeros(3, 2)], AdamState())
    assert torch.equal(p[0], before)


def test_adam_first_step_is_signed_lr():
    p = [torch.zeros(5, dtype=D)]
    g = torch.tensor([3.0, -0.2, 1e-2, -40.0, 7.0], dtype=D)
    adam_step(p, [g], AdamState(lr=1e-3))
    assert torch.allclose(p[0], -1e-3 * torch.sign(g), rtol=1e-5)


def test_adam_matches_reference():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(6)
    grads = rng.standard_normal((5, 6))
    p, m, v = p0.copy(), np.zeros(6), np.zeros(6)
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    tp, state = [torch.tensor(p0)], AdamState(lr=1e-2)
    for g in grads:
        adam_step(tp, [torch.tensor(g)], state)
    assert state.step_count == 5
    assert np.allclose(tp[0].numpy(), p)


def test_adam_is_deterministic_and_checks_shapes():
    def run():
        torch.manual_seed(0)
        p = [torch.randn(4, 4)]
        s = AdamState()
        for i in range(3):
            adam_step(p, [torch.sin(p[0] + i)], s)
        return p[0]

    assert torch.equal(run(), run())
    with pytest.raises(ValueError):
        adam_step([torch.zeros(2)], [torch.zeros(3)], AdamState())
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


def test_step_lr():
    assert step_lr(0) == 1e-3 and step_lr(34) == 1e-3
    assert step_lr(35) == 0.33e-3 and step_lr(199) == 0.33e-3
