import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atrousseg import tensor
from atrousseg.errors import ShapeError


def test_zeros_basics():
    z = tensor.zeros((1, 1, 2, 2))
    assert z.shape == (1, 1, 2, 2) and z.dtype == np.float64
    assert np.all(z == 0.0)
    assert tensor.zeros((2, 3, 4, 4)).size == 96
    assert tensor.zeros((1, 1, 1, 1)).shape == (1, 1, 1, 1)


def test_zeros_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        tensor.zeros((0, 1, 1, 1))
    with pytest.raises(Exception):
        tensor.zeros((2**40, 2**40, 1, 1))


def test_elementwise_ops():
    x = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
    assert np.array_equal(tensor.relu(x).ravel(), [0.0, 0.0, 2.0])
    assert np.array_equal(tensor.add(x, tensor.zeros((1, 1, 1, 3))), x)
    assert np.array_equal(tensor.scale(2.0, np.array([1.0, -3.0])), [2.0, -6.0])
    with pytest.raises(ShapeError):
        tensor.add(x, tensor.zeros((1, 1, 1, 4)))
    with pytest.raises(ShapeError):
        tensor.mul(x, tensor.zeros((1, 2, 1, 3)))


def test_concat_channel_counts(rng):
    a = rng.standard_normal((1, 256, 16, 16))
    b = rng.standard_normal((1, 48, 16, 16))
    assert tensor.concat_channels([a, b]).shape == (1, 304, 16, 16)
    parts = [rng.standard_normal((1, c, 3, 3)) for c in (2, 5, 1)]
    assert tensor.concat_channels(parts).shape == (1, 8, 3, 3)
    one = tensor.concat_channels([a])
    assert np.array_equal(one, a) and one is not a


def test_concat_rejects_mismatch(rng):
    a = rng.standard_normal((1, 2, 4, 4))
    b = rng.standard_normal((1, 2, 4, 5))
    with pytest.raises(ShapeError):
        tensor.concat_channels([a, b])
    with pytest.raises(ShapeError):
        tensor.concat_channels([a, rng.standard_normal((2, 2, 4, 4))])


@settings(deadline=None, max_examples=30)
@given(widths=st.lists(st.integers(1, 6), min_size=1, max_size=4),
       seed=st.integers(0, 2**31))
def test_concat_then_slice_roundtrip(widths, seed):
    r = np.random.default_rng(seed)
    parts = [r.standard_normal((2, c, 3, 4)) for c in widths]
    cat = tensor.concat_channels(parts)
    start = 0
    for p in parts:
        sl = cat[:, start:start + p.shape[1]]
        assert np.array_equal(sl, p)
        start += p.shape[1]


def test_pad_zero(rng):
    x = np.full((1, 1, 1, 1), 5.0)
    p = tensor.pad_zero(x, 1, 1, 1, 1)
    assert p.shape == (1, 1, 3, 3)
    assert p[0, 0, 1, 1] == 5.0 and p.sum() == 5.0
    y = rng.standard_normal((2, 3, 4, 5))
    assert np.array_equal(tensor.pad_zero(y, 0, 0, 0, 0), y)
    with pytest.raises(ShapeError):
        tensor.pad_zero(y, -1, 0, 0, 0)


@settings(deadline=None, max_examples=30)
@given(pads=st.tuples(*(st.integers(0, 3),) * 4), seed=st.integers(0, 2**31))
def test_pad_conserves_sum(pads, seed):
    import math
    x = np.random.default_rng(seed).standard_normal((1, 2, 3, 4))
    p = tensor.pad_zero(x, *pads)
    # interior is bit-identical, border exactly zero, so the exact sum of
    # elements is unchanged
    t, b, l, r = pads
    assert np.array_equal(p[:, :, t:t + 3, l:l + 4], x)
    assert p.sum() - math.fsum(x.ravel().tolist()) == 0.0 or \
        math.fsum(p.ravel().tolist()) == math.fsum(x.ravel().tolist())


def test_bilinear_constant_stays_constant():
    x = np.full((1, 2, 4, 4), 3.7)
    y = tensor.bilinear_resize(x, 16, 16)
    assert y.shape == (1, 2, 16, 16)
    assert np.abs(y - 3.7).max() == 0.0


@settings(deadline=None, max_examples=25)
@given(c=st.floats(-1e3, 1e3), oh=st.integers(1, 9), ow=st.integers(1, 9))
def test_bilinear_constant_property(c, oh, ow):
    x = np.full((1, 1, 3, 5), c)
    assert np.abs(tensor.bilinear_resize(x, oh, ow) - c).max() == 0.0


def test_bilinear_identity_is_bit_exact(rng):
    x = rng.standard_normal((2, 3, 5, 7))
    y = tensor.bilinear_resize(x, 5, 7)
    assert np.array_equal(y, x) and y is not x


def test_bilinear_hand_case():
    # 2x2 -> 3x3 align-corners samples the corner/edge/center points
    x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    y = tensor.bilinear_resize(x, 3, 3)[0, 0]
    want = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])
    assert np.array_equal(y, want)


def test_bilinear_rejects_empty_output(rng):
    with pytest.raises(ShapeError):
        tensor.bilinear_resize(rng.standard_normal((1, 1, 4, 4)), 0, 3)


def test_bilinear_backward_is_adjoint(rng):
    x = rng.standard_normal((1, 2, 4, 5))
    y = tensor.bilinear_resize(x, 7, 3)
    dy = rng.standard_normal(y.shape)
    dx = tensor.bilinear_resize_backward(dy, 4, 5)
    assert abs(np.vdot(dy, y) - np.vdot(dx, x)) < 1e-10
