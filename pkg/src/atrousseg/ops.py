"""Differentiable operators: the convolution family, batch norm, pooling, loss.

Convolutions compute y[i] = sum_k x[i + r*k] * w[k] sampled at output-stride
positions. SAME padding is symmetric, (k-1)*r/2 per side (kernels are odd
only), which makes output size ceil(in/stride) independent of the rate and
keeps stride-s outputs an exact subsample of the stride-1 outputs — the
property the output-stride replanning machinery relies on.

Standard convolutions gather patches into a GEMM-ready layout and do one
BLAS matmul; depthwise convolutions accumulate over kernel taps with
vectorized slices. The *_cached variants accept a per-call-site scratch
dict that recycles the large gather buffers between steps (fresh 40MB
allocations page-fault; reuse is ~10x faster). A scratch dict must not be
shared between two live forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import check_nchw

SAME = "SAME"
VALID = "VALID"


@dataclass(frozen=True)
class ConvGeometry:
    stride: int = 1
    rate: int = 1
    padding: str = SAME

    def __post_init__(self):
        if self.stride < 1 or self.rate < 1:
            raise ShapeError(f"stride/rate must be >= 1, got {self}")
        if self.padding not in (SAME, VALID):
            raise ShapeError(f"padding must be SAME or VALID, got {self.padding!r}")


def effective_extent(k: int, rate: int) -> int:
    return k + (k - 1) * (rate - 1)


def _check_kernel(w: np.ndarray, name: str = "kernel") -> None:
    if w.ndim != 4:
        raise ShapeError(f"{name}: expected (out,in,kh,kw) weights, got {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"{name}: kernel dims must be odd and >= 1, got {kh}x{kw}")


def _geometry(in_size: int, k: int, g: ConvGeometry) -> tuple[int, int]:
    """Return (output size, per-side pad) along one spatial axis."""
    eff = effective_extent(k, g.rate)
    if g.padding == SAME:
        pad = ((k - 1) * g.rate) // 2
    else:
        pad = 0
        if in_size < eff:
            raise ShapeError(
                f"VALID convolution with effective kernel {eff} exceeds input {in_size}")
    out = (in_size + 2 * pad - eff) // g.stride + 1
    return out, pad


def conv_output_hw(h: int, w: int, kh: int, kw: int, g: ConvGeometry) -> tuple[int, int]:
    oh, _ = _geometry(h, kh, g)
    ow, _ = _geometry(w, kw, g)
    return oh, ow


def _scratch(scratch: dict | None, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if scratch is None:
        return np.empty(shape, dtype=np.float64)
    buf = scratch.get(key)
    if buf is None or buf.shape != shape:
        buf = np.empty(shape, dtype=np.float64)
        scratch[key] = buf
    return buf


def _tap_slices(i: int, j: int, g: ConvGeometry, oh: int, ow: int) -> tuple[slice, slice]:
    rs = slice(i * g.rate, i * g.rate + (oh - 1) * g.stride + 1, g.stride)
    cs = slice(j * g.rate, j * g.rate + (ow - 1) * g.stride + 1, g.stride)
    return rs, cs


def _pad_nhwc(x: np.ndarray, ph: int, pw: int, scratch, key: str) -> np.ndarray:
    """Zero-padded copy of x in (n,h,w,c) layout."""
    n, c, h, w = x.shape
    xn = _scratch(scratch, key, (n, h + 2 * ph, w + 2 * pw, c))
    if ph or pw:
        xn[:, :ph, :, :] = 0.0
        xn[:, h + ph:, :, :] = 0.0
        xn[:, :, :pw, :] = 0.0
        xn[:, :, w + pw:, :] = 0.0
    xn[:, ph:ph + h, pw:pw + w, :] = x.transpose(0, 2, 3, 1)
    return xn


def _weights_km(w: np.ndarray) -> np.ndarray:
    """(out,in,kh,kw) weights as a (kh*kw*in, out) GEMM operand."""
    co, ci, kh, kw = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(kh * kw * ci, co)


def conv2d_cached(x: np.ndarray, w: np.ndarray, g: ConvGeometry,
                  scratch: dict | None = None):
    """Forward pass returning (y, cache) so backward can reuse the patches."""
    check_nchw(x, "conv input")
    _check_kernel(w)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects "
                         f"{w.shape[1]}")
    n, c, h, win = x.shape
    co, _, kh, kw = w.shape
    oh, ph = _geometry(h, kh, g)
    ow, pw = _geometry(win, kw, g)
    xn = _pad_nhwc(x, ph, pw, scratch, "xn")
    cols = _scratch(scratch, "cols", (n, oh, ow, kh, kw, c))
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, g, oh, ow)
            cols[:, :, :, i, j, :] = xn[:, rs, cs, :]
    cols2 = cols.reshape(n * oh * ow, kh * kw * c)
    wk = _weights_km(w)
    y = cols2 @ wk
    y = np.ascontiguousarray(y.reshape(n, oh, ow, co).transpose(0, 3, 1, 2))
    cache = (cols2, wk, (ph, pw), scratch)
    return y, cache


def conv2d(x: np.ndarray, w: np.ndarray, g: ConvGeometry = ConvGeometry()) -> np.ndarray:
    return conv2d_cached(x, w, g)[0]


def conv2d_backward(x: np.ndarray, w: np.ndarray, g: ConvGeometry, dy: np.ndarray,
                    cache=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact adjoints of the forward map: gradients w.r.t. input and weights."""
    if cache is None:
        _, cache = conv2d_cached(x, w, g)
    cols2, wk, (ph, pw), scratch = cache
    n, c, h, win = x.shape
    co, _, kh, kw = w.shape
    oh, _ = _geometry(h, kh, g)
    ow, _ = _geometry(win, kw, g)
    if dy.shape != (n, co, oh, ow):
        raise ShapeError(f"conv2d_backward: dy shape {dy.shape}, expected "
                         f"{(n, co, oh, ow)}")
    m = n * oh * ow
    dy2 = _scratch(scratch, "dy2", (n, oh, ow, co))
    dy2[...] = dy.transpose(0, 2, 3, 1)
    dy2 = dy2.reshape(m, co)
    dwk = cols2.T @ dy2                                    # (kh*kw*c, co)
    dw = np.ascontiguousarray(
        dwk.reshape(kh, kw, c, co).transpose(3, 2, 0, 1))
    dcols = _scratch(scratch, "dcols", (m, kh * kw * c))
    np.matmul(dy2, wk.T, out=dcols)
    dcols = dcols.reshape(n, oh, ow, kh, kw, c)
    dxn = _scratch(scratch, "dxn", (n, h + 2 * ph, win + 2 * pw, c))
    dxn[...] = 0.0
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, g, oh, ow)
            dxn[:, rs, cs, :] += dcols[:, :, :, i, j, :]
    dx = np.ascontiguousarray(
        dxn[:, ph:ph + h, pw:pw + win, :].transpose(0, 3, 1, 2))
    return dx, dw


def depthwise_conv2d_cached(x: np.ndarray, w: np.ndarray, g: ConvGeometry,
                            scratch: dict | None = None):
    """Per-channel spatial convolution; w has shape (channels, 1, kh, kw)."""
    check_nchw(x, "depthwise input")
    _check_kernel(w, "depthwise kernel")
    if w.shape[1] != 1 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"depthwise_conv2d: expected one (1,kh,kw) filter per input "
                         f"channel, got weights {w.shape} for {x.shape[1]} channels")
    n, c, h, win = x.shape
    kh, kw = w.shape[2], w.shape[3]
    oh, ph = _geometry(h, kh, g)
    ow, pw = _geometry(win, kw, g)
    xp = _scratch(scratch, "dw_xp", (n, c, h + 2 * ph, win + 2 * pw))
    if ph or pw:
        xp[:, :, :ph, :] = 0.0
        xp[:, :, h + ph:, :] = 0.0
        xp[:, :, :, :pw] = 0.0
        xp[:, :, :, win + pw:] = 0.0
    xp[:, :, ph:ph + h, pw:pw + win] = x
    y = np.zeros((n, c, oh, ow), dtype=np.float64)
    tmp = _scratch(scratch, "dw_tmp", (n, c, oh, ow))
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, g, oh, ow)
            np.multiply(xp[:, :, rs, cs], w[:, 0, i, j][None, :, None, None],
                        out=tmp)
            y += tmp
    cache = (xp, (ph, pw), scratch)
    return y, cache


def depthwise_conv2d(x: np.ndarray, w: np.ndarray,
                     g: ConvGeometry = ConvGeometry()) -> np.ndarray:
    return depthwise_conv2d_cached(x, w, g)[0]


def depthwise_conv2d_backward(x: np.ndarray, w: np.ndarray, g: ConvGeometry,
                              dy: np.ndarray, cache=None):
    if cache is None:
        _, cache = depthwise_conv2d_cached(x, w, g)
    xp, (ph, pw), scratch = cache
    kh, kw = w.shape[2], w.shape[3]
    n, c, oh, ow = dy.shape
    dw = np.zeros_like(w)
    dxp = _scratch(scratch, "dw_dxp", xp.shape)
    dxp[...] = 0.0
    tmp = _scratch(scratch, "dw_tmp2", dy.shape)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, g, oh, ow)
            dw[:, 0, i, j] = np.einsum("nchw,nchw->c", dy, xp[:, :, rs, cs])
            np.multiply(dy, w[:, 0, i, j][None, :, None, None], out=tmp)
            dxp[:, :, rs, cs] += tmp
    h, win = x.shape[2], x.shape[3]
    dx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + win])
    return dx, dw


def pointwise_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """1x1 convolution: a per-pixel linear map across channels."""
    check_nchw(x, "pointwise input")
    if w.ndim != 4 or w.shape[2] != 1 or w.shape[3] != 1:
        raise ShapeError(f"pointwise_conv2d: expected (out,in,1,1) weights, got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise_conv2d: channel mismatch {x.shape[1]} vs {w.shape[1]}")
    xs = x[:, :, ::stride, ::stride] if stride > 1 else x
    y = np.tensordot(xs, w[:, :, 0, 0], axes=([1], [1]))  # (n, h, w, out)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def pointwise_conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray,
                              stride: int = 1):
    xs = x[:, :, ::stride, ::stride] if stride > 1 else x
    m = w[:, :, 0, 0]
    dw = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    dxs = np.tensordot(dy, m, axes=([1], [0]))             # (n, h, w, in)
    dxs = np.ascontiguousarray(dxs.transpose(0, 3, 1, 2))
    if stride == 1:
        return dxs, dw
    dx = np.zeros_like(x)
    dx[:, :, ::stride, ::stride] = dxs
    return dx, dw


def separable_conv2d(x: np.ndarray, depth_w: np.ndarray, point_w: np.ndarray,
                     g: ConvGeometry = ConvGeometry(), mid_bn=None,
                     training: bool = False) -> np.ndarray:
    """Depthwise then pointwise convolution; atrous when g.rate > 1.

    With mid_bn set, batch norm + ReLU are applied between the two stages.
    """
    h = depthwise_conv2d(x, depth_w, g)
    if mid_bn is not None:
        h = np.maximum(batch_norm(h, mid_bn, training), 0.0)
    return pointwise_conv2d(h, point_w)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    frozen: bool = False

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5, momentum: float = 0.1,
                 frozen: bool = False) -> "BatchNormParams":
        return cls(gamma=np.ones(channels), beta=np.zeros(channels),
                   mean=np.zeros(channels), var=np.ones(channels),
                   epsilon=epsilon, momentum=momentum, frozen=frozen)


def batch_norm_cached(x: np.ndarray, p: BatchNormParams, training: bool):
    """Normalize per channel; in training (and not frozen) use batch statistics
    over (n,h,w) and blend them into the running estimates."""
    check_nchw(x, "batch_norm input")
    if p.gamma.shape[0] != x.shape[1]:
        raise ShapeError(f"batch_norm: {p.gamma.shape[0]} channels of parameters for "
                         f"{x.shape[1]} channel input")
    use_batch = training and not p.frozen
    n, c, h, w = x.shape
    m = n * h * w
    if use_batch:
        mu = x.mean(axis=(0, 2, 3))
        xhat = x - mu[None, :, None, None]
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        p.mean[...] = (1.0 - p.momentum) * p.mean + p.momentum * mu
        p.var[...] = (1.0 - p.momentum) * p.var + p.momentum * var
        inv = 1.0 / np.sqrt(var + p.epsilon)
        np.multiply(xhat, inv[None, :, None, None], out=xhat)
    else:
        inv = 1.0 / np.sqrt(p.var + p.epsilon)
        xhat = np.multiply(x, inv[None, :, None, None])
        xhat -= (p.mean * inv)[None, :, None, None]
    y = np.multiply(xhat, p.gamma[None, :, None, None])
    y += p.beta[None, :, None, None]
    return y, (xhat, inv, use_batch)


def batch_norm(x: np.ndarray, p: BatchNormParams, training: bool = False) -> np.ndarray:
    return batch_norm_cached(x, p, training)[0]


def batch_norm_backward(dy: np.ndarray, p: BatchNormParams, cache):
    xhat, inv, use_batch = cache
    dgamma = np.einsum("nchw,nchw->c", dy, xhat)
    dbeta = dy.sum(axis=(0, 2, 3))
    scale = p.gamma * inv
    if not use_batch:
        return dy * scale[None, :, None, None], dgamma, dbeta
    n, c, h, w = dy.shape
    m = n * h * w
    # dL/dx through the batch mean and variance as well:
    # dx = scale*dy - (scale*dgamma/m)*xhat - scale*dbeta/m
    dx = np.multiply(dy, scale[None, :, None, None])
    dx -= np.multiply(xhat, (scale * dgamma / m)[None, :, None, None])
    dx -= (scale * dbeta / m)[None, :, None, None]
    return dx, dgamma, dbeta


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    check_nchw(x, "global_avg_pool input")
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(dy: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.broadcast_to(dy / (h * w), (dy.shape[0], dy.shape[1], h, w)).copy()


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                          void_index: int = 255) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross entropy over non-void pixels, with the analytic
    gradient. Void pixels contribute neither loss nor gradient; an all-void
    label map yields loss 0 and zero gradient."""
    check_nchw(logits, "logits")
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits "
                         f"{logits.shape}")
    valid = labels != void_index
    m = int(valid.sum())
    if m == 0:
        return 0.0, np.zeros_like(logits)
    lbl = np.where(valid, labels, 0).astype(np.intp)
    if lbl.max() >= k:
        raise ShapeError(f"label value {lbl.max()} out of range for {k} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, lbl[:, None], axis=1)[:, 0]
    loss = float(((logsumexp - picked) * valid).sum() / m)
    probs = softmax(logits, axis=1)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, lbl[:, None], 1.0, axis=1)
    dlogits = (probs - onehot) * valid[:, None] / m
    return loss, dlogits
