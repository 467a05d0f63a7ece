"""Minimal reverse-mode machinery over rank-4 arrays.

A Var wraps a value plus the closures needed to push a gradient back to
its parents. The graph is a DAG (skip connections, decoder taps), so
backward runs over an iterative topological order. Intermediate grads are
freed as soon as a node has propagated; only leaf grads survive.
"""

from __future__ import annotations

import numpy as np

from . import ops, tensor
from .errors import ShapeError


class Var:
    __slots__ = ("data", "grad", "parents", "bwd", "name")

    def __init__(self, data, parents=(), bwd=None, name=""):
        self.data = data
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var({self.name or 'anon'}, shape={np.shape(self.data)})"


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, int]] = [(root, 0)]
    seen.add(id(root))
    while stack:
        node, i = stack.pop()
        if i < len(node.parents):
            stack.append((node, i + 1))
            p = node.parents[i]
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, 0))
        else:
            order.append(node)
    return order


def backward(root: Var, seed_grad: np.ndarray) -> None:
    """Propagate seed_grad from root to every reachable leaf."""
    if seed_grad.shape != root.data.shape:
        raise ShapeError(f"backward: seed grad shape {seed_grad.shape} vs root "
                         f"{root.data.shape}")
    order = _toposort(root)
    root.grad = seed_grad
    for node in reversed(order):
        if node.bwd is None or node.grad is None:
            continue
        grads = node.bwd(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
        node.grad = None  # interior grads are no longer needed


# ---------------------------------------------------------------------------
# op wrappers


def vconv2d(x: Var, w: Var, g: ops.ConvGeometry, scratch: dict | None = None,
            name="") -> Var:
    y, cache = ops.conv2d_cached(x.data, w.data, g, scratch)

    def bwd(dy):
        return ops.conv2d_backward(x.data, w.data, g, dy, cache)

    return Var(y, (x, w), bwd, name)


def vdepthwise(x: Var, w: Var, g: ops.ConvGeometry, scratch: dict | None = None,
               name="") -> Var:
    y, cache = ops.depthwise_conv2d_cached(x.data, w.data, g, scratch)

    def bwd(dy):
        return ops.depthwise_conv2d_backward(x.data, w.data, g, dy, cache)

    return Var(y, (x, w), bwd, name)


def vpointwise(x: Var, w: Var, stride: int = 1, name="") -> Var:
    y = ops.pointwise_conv2d(x.data, w.data, stride)

    def bwd(dy):
        return ops.pointwise_conv2d_backward(x.data, w.data, dy, stride)

    return Var(y, (x, w), bwd, name)


def vbatch_norm(x: Var, gamma: Var, beta: Var, state, training: bool, name="") -> Var:
    p = ops.BatchNormParams(gamma=gamma.data, beta=beta.data,
                            mean=state.mean, var=state.var,
                            epsilon=state.epsilon, momentum=state.momentum,
                            frozen=state.frozen)
    y, cache = ops.batch_norm_cached(x.data, p, training)

    def bwd(dy):
        return ops.batch_norm_backward(dy, p, cache)

    return Var(y, (x, gamma, beta), bwd, name)


def vrelu(x: Var, name="") -> Var:
    y = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def bwd(dy):
        return (dy * mask,)

    return Var(y, (x,), bwd, name)


def vadd(a: Var, b: Var, name="") -> Var:
    y = tensor.add(a.data, b.data)

    def bwd(dy):
        return dy, dy

    return Var(y, (a, b), bwd, name)


def vconcat(parts: list[Var], name="") -> Var:
    y = tensor.concat_channels([p.data for p in parts])
    widths = [p.data.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def bwd(dy):
        return tuple(np.ascontiguousarray(g) for g in np.split(dy, splits, axis=1))

    return Var(y, tuple(parts), bwd, name)


def vresize(x: Var, out_h: int, out_w: int, name="") -> Var:
    in_h, in_w = x.data.shape[2], x.data.shape[3]
    y = tensor.bilinear_resize(x.data, out_h, out_w)

    def bwd(dy):
        return (tensor.bilinear_resize_backward(dy, in_h, in_w),)

    return Var(y, (x,), bwd, name)


def vglobal_avg_pool(x: Var, name="") -> Var:
    h, w = x.data.shape[2], x.data.shape[3]
    y = ops.global_avg_pool(x.data)

    def bwd(dy):
        return (ops.global_avg_pool_backward(dy, h, w),)

    return Var(y, (x,), bwd, name)
