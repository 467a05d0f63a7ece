"""Convolution-family semantics against independent direct-summation
oracles, plus the batch-norm/pool/loss contracts."""

import numpy as np
import pytest

from atrousseg import ops
from atrousseg.ops import ConvGeometry

from conftest import oracle_conv

ORACLE_GRID = [(k, r, s, p)
               for k in (1, 3, 5)
               for r in (1, 2, 4)
               for s in (1, 2)
               for p in ("SAME", "VALID")]


@pytest.mark.parametrize("k,r,s,p", ORACLE_GRID)
def test_conv2d_matches_direct_summation(k, r, s, p, rng):
    x = rng.standard_normal((2, 2, 9, 8))
    w = rng.standard_normal((3, 2, k, k))
    g = ConvGeometry(stride=s, rate=r, padding=p)
    eff = (k - 1) * r + 1
    if p == "VALID" and eff > 8:
        with pytest.raises(Exception):
            ops.conv2d(x, w, g)
        return
    got = ops.conv2d(x, w, g)
    want = oracle_conv(x, w, s, r, p)
    assert got.shape == want.shape
    assert np.abs(got - want).max() <= 1e-12


def test_conv2d_spec_example_atrous_valid():
    x = np.array([1.0, 2, 3, 4, 5]).reshape(1, 1, 1, 5)
    w = np.array([1.0, 0, -1]).reshape(1, 1, 1, 3)
    y = ops.conv2d(x, w, ConvGeometry(rate=2, padding="VALID"))
    assert y.shape == (1, 1, 1, 1)
    assert y[0, 0, 0, 0] == -4.0  # spans indices 0,2,4: 1 - 5


def test_effective_field_of_view():
    assert ops.effective_extent(3, 2) == 5
    assert ops.effective_extent(3, 1) == 3
    assert ops.effective_extent(5, 4) == 17


def test_kernel_dilation_equivalence(rng):
    """Atrous conv equals standard conv with the zero-inflated kernel on
    VALID padding, exactly."""
    x = rng.standard_normal((1, 2, 9, 9))
    w = rng.standard_normal((2, 2, 3, 3))
    r = 2
    y_atrous = ops.conv2d(x, w, ConvGeometry(rate=r, padding="VALID"))
    wi = np.zeros((2, 2, 5, 5))
    wi[:, :, ::r, ::r] = w
    y_inflated = ops.conv2d(x, wi, ConvGeometry(padding="VALID"))
    assert y_atrous.shape == y_inflated.shape
    assert np.abs(y_atrous - y_inflated).max() <= 1e-12


def test_conv_linearity(rng):
    x1 = rng.standard_normal((1, 2, 6, 6))
    x2 = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    g = ConvGeometry(rate=2)
    lhs = ops.conv2d(2.5 * x1 - 1.25 * x2, w, g)
    rhs = 2.5 * ops.conv2d(x1, w, g) - 1.25 * ops.conv2d(x2, w, g)
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_conv_same_output_size_is_ceil(rng):
    for hin in (4, 5, 6, 7, 9):
        for s in (1, 2):
            for r in (1, 2, 3):
                y = ops.conv2d(rng.standard_normal((1, 1, hin, hin)),
                               rng.standard_normal((1, 1, 3, 3)),
                               ConvGeometry(stride=s, rate=r))
                assert y.shape[2] == -(-hin // s)


def test_conv_channel_mismatch(rng):
    with pytest.raises(Exception):
        ops.conv2d(rng.standard_normal((1, 3, 5, 5)),
                   rng.standard_normal((2, 2, 3, 3)), ConvGeometry())


def test_conv_rejects_even_kernels(rng):
    with pytest.raises(Exception):
        ops.conv2d(rng.standard_normal((1, 1, 5, 5)),
                   rng.standard_normal((1, 1, 2, 2)), ConvGeometry())


def test_conv_backward_zero_dy_gives_zero(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    g = ConvGeometry(rate=2)
    y = ops.conv2d(x, w, g)
    dx, dw = ops.conv2d_backward(x, w, g, np.zeros_like(y))
    assert np.all(dx == 0.0) and np.all(dw == 0.0)


def test_conv_backward_1x1_is_per_pixel_outer_product(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    w = rng.standard_normal((2, 3, 1, 1))
    g = ConvGeometry()
    y = ops.conv2d(x, w, g)
    dy = rng.standard_normal(y.shape)
    _, dw = ops.conv2d_backward(x, w, g, dy)
    want = np.einsum("nohw,nihw->oi", dy, x)[:, :, None, None]
    assert np.abs(dw - want).max() < 1e-12


def test_conv_adjoint_identity(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    g = ConvGeometry(stride=2, rate=2)
    y = ops.conv2d(x, w, g)
    dy = rng.standard_normal(y.shape)
    dx, dw = ops.conv2d_backward(x, w, g, dy)
    assert abs(np.vdot(dy, y) - np.vdot(dx, x)) < 1e-9
    assert abs(np.vdot(dy, y) - np.vdot(dw, w)) < 1e-9


# ---------------------------------------------------------------------------
# depthwise / pointwise / separable


def test_depthwise_delta_kernels_identity(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = np.zeros((2, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    assert np.array_equal(ops.depthwise_conv2d(x, w), x)


def test_depthwise_channel_isolation(rng):
    x = rng.standard_normal((1, 3, 6, 6))
    w = rng.standard_normal((3, 1, 3, 3))
    w[0] = 0.0
    y = ops.depthwise_conv2d(x, w)
    assert np.all(y[:, 0] == 0.0)
    # perturbing channel 1 of the input changes only channel 1 of the output
    x2 = x.copy()
    x2[:, 1] += rng.standard_normal((1, 6, 6))
    y2 = ops.depthwise_conv2d(x2, w)
    assert np.array_equal(y[:, [0, 2]], y2[:, [0, 2]])
    assert not np.array_equal(y[:, 1], y2[:, 1])


@pytest.mark.parametrize("r,s,p", [(1, 1, "SAME"), (2, 1, "SAME"), (2, 2, "SAME"),
                                   (2, 1, "VALID"), (4, 1, "SAME")])
def test_depthwise_matches_per_channel_conv(r, s, p, rng):
    x = rng.standard_normal((2, 2, 9, 9))
    w = rng.standard_normal((2, 1, 3, 3))
    got = ops.depthwise_conv2d(x, w, ConvGeometry(stride=s, rate=r, padding=p))
    want = oracle_conv(x, w, s, r, p, depthwise=True)
    assert np.abs(got - want).max() <= 1e-12


def test_depthwise_filter_count_mismatch(rng):
    with pytest.raises(Exception):
        ops.depthwise_conv2d(rng.standard_normal((1, 3, 5, 5)),
                             rng.standard_normal((2, 1, 3, 3)))


def test_pointwise_identity_and_conv2d_agreement(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    eye = np.eye(3)[:, :, None, None]
    assert np.array_equal(ops.pointwise_conv2d(x, eye), x)
    w = rng.standard_normal((4, 3, 1, 1))
    assert np.abs(ops.pointwise_conv2d(x, w) - ops.conv2d(x, w)).max() <= 1e-12


def test_pointwise_is_per_pixel_matmul(rng):
    x = rng.standard_normal((1, 3, 2, 2))
    w = rng.standard_normal((4, 3, 1, 1))
    y = ops.pointwise_conv2d(x, w)
    for i in range(2):
        for j in range(2):
            want = w[:, :, 0, 0] @ x[0, :, i, j]
            assert np.abs(y[0, :, i, j] - want).max() < 1e-12


def test_separable_composition_is_exact(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    dw = rng.standard_normal((3, 1, 3, 3))
    pw = rng.standard_normal((5, 3, 1, 1))
    g = ConvGeometry(rate=2)
    got = ops.separable_conv2d(x, dw, pw, g)
    want = ops.pointwise_conv2d(ops.depthwise_conv2d(x, dw, g), pw)
    assert np.array_equal(got, want)


def test_separable_identity_composition(rng):
    x = rng.standard_normal((1, 3, 5, 5))
    dw = np.zeros((3, 1, 3, 3))
    dw[:, 0, 1, 1] = 1.0
    pw = np.eye(3)[:, :, None, None]
    assert np.array_equal(ops.separable_conv2d(x, dw, pw), x)


def test_separable_with_mid_bn_inserts_bn_relu(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    dw = rng.standard_normal((3, 1, 3, 3))
    pw = rng.standard_normal((4, 3, 1, 1))
    bn = ops.BatchNormParams.identity(3)
    bn.mean[...] = 0.3
    got = ops.separable_conv2d(x, dw, pw, mid_bn=bn)
    mid = np.maximum(ops.batch_norm(ops.depthwise_conv2d(x, dw), bn), 0.0)
    want = ops.pointwise_conv2d(mid, pw)
    assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# batch norm / pooling / loss


def test_batch_norm_fixed_point(rng):
    x = rng.standard_normal((4, 3, 8, 8))
    x -= x.mean(axis=(0, 2, 3), keepdims=True)
    x /= x.std(axis=(0, 2, 3), keepdims=True)
    p = ops.BatchNormParams.identity(3)
    y = ops.batch_norm(x, p, training=True)
    assert np.abs(y - x).max() < 1e-4  # epsilon effect only


def test_batch_norm_hand_case():
    # single-channel batch {1,2,3}: mean 2, biased variance 2/3
    x = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1, 1)
    p = ops.BatchNormParams.identity(1, epsilon=1e-5)
    y = ops.batch_norm(x, p, training=True)
    inv = 1.0 / np.sqrt(2.0 / 3.0 + 1e-5)
    want = np.array([-1.0, 0.0, 1.0]) * inv
    assert np.abs(y.ravel() - want).max() < 1e-12
    assert abs(p.mean[0] - 0.1 * 2.0) < 1e-12       # momentum 0.1 blend from 0
    assert abs(p.var[0] - (0.9 + 0.1 * 2.0 / 3.0)) < 1e-12


def test_batch_norm_frozen_is_affine_and_keeps_stats(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    p = ops.BatchNormParams.identity(3, frozen=True)
    p.gamma[...] = [1.0, 2.0, 0.5]
    p.beta[...] = [0.0, -1.0, 3.0]
    p.mean[...] = [0.1, 0.2, 0.3]
    p.var[...] = [1.0, 4.0, 0.25]
    mean0, var0 = p.mean.copy(), p.var.copy()
    y = ops.batch_norm(x, p, training=True)
    inv = 1.0 / np.sqrt(p.var + p.epsilon)
    want = p.gamma * inv * (x.transpose(0, 2, 3, 1) - p.mean) + p.beta
    assert np.abs(y - want.transpose(0, 3, 1, 2)).max() < 1e-12
    assert np.array_equal(p.mean, mean0) and np.array_equal(p.var, var0)


def test_batch_norm_channel_mismatch(rng):
    with pytest.raises(Exception):
        ops.batch_norm(rng.standard_normal((1, 3, 2, 2)),
                       ops.BatchNormParams.identity(2), training=False)


def test_global_avg_pool(rng):
    const = np.full((2, 3, 5, 5), 1.7)
    assert np.abs(ops.global_avg_pool(const) - 1.7).max() < 1e-15
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
    assert ops.global_avg_pool(x)[0, 0, 0, 0] == 2.5
    dy = rng.standard_normal((1, 1, 1, 1))
    dx = ops.global_avg_pool_backward(dy, 2, 2)
    assert np.abs(dx - dy / 4.0).max() == 0.0


def test_loss_limits(rng):
    labels = rng.integers(0, 3, size=(1, 4, 4)).astype(np.uint8)
    logits = np.zeros((1, 3, 4, 4))
    for k in range(3):
        logits[0, k][labels[0] == k] = 100.0
    loss, _ = ops.softmax_cross_entropy(logits, labels, 255)
    assert loss < 1e-8

    uniform = np.zeros((1, 3, 4, 4))
    loss, _ = ops.softmax_cross_entropy(uniform, labels, 255)
    assert abs(loss - np.log(3.0)) < 1e-12


def test_loss_all_void_defined_as_zero():
    logits = np.random.default_rng(0).standard_normal((1, 3, 2, 2))
    labels = np.full((1, 2, 2), 255, dtype=np.uint8)
    loss, d = ops.softmax_cross_entropy(logits, labels, 255)
    assert loss == 0.0 and np.all(d == 0.0)


def test_loss_void_pixels_carry_no_gradient(rng):
    logits = rng.standard_normal((1, 3, 2, 2))
    labels = np.array([[0, 255], [1, 2]], dtype=np.uint8)[None]
    _, d = ops.softmax_cross_entropy(logits, labels, 255)
    assert np.all(d[0, :, 0, 1] == 0.0)
    assert np.any(d[0, :, 0, 0] != 0.0)
