"""Rank-4 tensor primitives.

Every feature map in this library is a float64 numpy array laid out as
(n, c, h, w), C-contiguous (n-major). All file formats and checkpoints
use that element order. Functions here validate shapes and keep the
handful of invariants the rest of the stack leans on: concat/slice
round-trips exactly, zero padding conserves the sum, bilinear resize of
a constant map is that constant.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, SizeError

Shape = tuple[int, int, int, int]

# Largest element count we are willing to address; beyond this the flat
# index no longer fits comfortably in an int64.
_MAX_ELEMS = 2**62


def check_nchw(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name}: expected a rank-4 (n,c,h,w) array, got "
                         f"{getattr(x, 'shape', type(x))}")
    if x.dtype != np.float64:
        raise ShapeError(f"{name}: expected float64 data, got {x.dtype}")
    return x


def zeros(shape: Shape) -> np.ndarray:
    n, c, h, w = shape
    if min(n, c, h, w) < 1:
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    if n * c * h * w > _MAX_ELEMS:
        raise SizeError(f"tensor of shape {shape} exceeds the index range")
    return np.zeros((n, c, h, w), dtype=np.float64)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def scale(alpha: float, x: np.ndarray) -> np.ndarray:
    return alpha * x


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels: need at least one part")
    n, _, h, w = parts[0].shape
    for p in parts:
        check_nchw(p, "concat part")
        if p.shape[0] != n or p.shape[2] != h or p.shape[3] != w:
            raise ShapeError("concat_channels: parts disagree on (n,h,w): "
                             f"{[q.shape for q in parts]}")
    if len(parts) == 1:
        return parts[0].copy()
    return np.concatenate(parts, axis=1)


def pad_zero(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    check_nchw(x)
    if min(top, bottom, left, right) < 0:
        raise ShapeError("pad_zero: pads must be >= 0")
    if top == bottom == left == right == 0:
        return x.copy()
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))


def _resize_coords(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align-corners source coordinates: lower index, upper index, fraction."""
    if out_size == 1:
        src = np.zeros(1)
    else:
        src = np.arange(out_size) * ((in_size - 1) / (out_size - 1))
    lo = np.floor(src).astype(np.intp)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-channel bilinear interpolation with align-corners sampling.

    Uses the lerp form a + t*(b-a), which keeps constant inputs exactly
    constant. Resizing to the input size returns a bit-identical copy.
    """
    check_nchw(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: output dims must be >= 1, got "
                         f"({out_h},{out_w})")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    rlo, rhi, rfrac = _resize_coords(h, out_h)
    clo, chi, cfrac = _resize_coords(w, out_w)
    top = x[:, :, rlo, :]
    bot = x[:, :, rhi, :]
    rows = top + rfrac[None, None, :, None] * (bot - top)
    left = rows[:, :, :, clo]
    right = rows[:, :, :, chi]
    return left + cfrac[None, None, None, :] * (right - left)


def bilinear_resize_backward(dy: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of bilinear_resize back onto an (in_h, in_w) grid."""
    check_nchw(dy)
    n, c, out_h, out_w = dy.shape
    if (out_h, out_w) == (in_h, in_w):
        return dy.copy()
    rh = _resize_matrix(in_h, out_h)
    rw = _resize_matrix(in_w, out_w)
    # dx = Rh^T . dy . Rw
    tmp = np.tensordot(rh, dy, axes=([0], [2]))      # (in_h, n, c, out_w)
    dx = np.tensordot(tmp, rw, axes=([3], [0]))      # (in_h, n, c, in_w)
    return np.ascontiguousarray(dx.transpose(1, 2, 0, 3))


def _resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out, in) interpolation matrix for the align-corners map."""
    lo, hi, frac = _resize_coords(in_size, out_size)
    m = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m
