"""Optimization: poly learning-rate schedule, SGD with momentum, the
single training step, and parameter initialization.

A training run owns its ParamStore exclusively; the only mutation outside
sgd_step is the batch-norm running statistics, updated inside the forward
pass of a training step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import backward
from .errors import NumericError, ShapeError
from .model import Model
from .params import ParamStore, glorot_fill
from .plan import ArchSpec


@dataclass(frozen=True)
class PolySchedule:
    base_lr: float = 0.007
    power: float = 0.9
    max_iter: int = 30000

    def __post_init__(self):
        if self.base_lr <= 0 or self.power <= 0 or self.max_iter < 1:
            raise ShapeError(f"invalid schedule {self}")


def lr_at(s: PolySchedule, iteration: int) -> float:
    """base_lr * (1 - iter/max_iter)^power, clamped to 0 past max_iter."""
    if iteration < 0:
        raise ShapeError(f"iteration must be >= 0, got {iteration}")
    if iteration >= s.max_iter:
        return 0.0
    return s.base_lr * (1.0 - iteration / s.max_iter) ** s.power


@dataclass
class SgdState:
    momentum: float = 0.9
    weight_decay: float = 4e-5
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    _scratch: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.momentum < 1.0) or self.weight_decay < 0:
            raise ShapeError(f"invalid optimizer state {self}")


def sgd_step(store: ParamStore, st: SgdState, lr: float) -> None:
    """v <- m*v + g + wd*w;  w <- w - lr*v; gradients are zeroed after."""
    largest = max((p.value.size for p in store), default=0)
    if st._scratch is None or st._scratch.size < largest:
        st._scratch = np.empty(largest, dtype=np.float64)
    for p in store:
        if not p.trainable:
            continue
        if p.grad is None:
            raise NumericError(f"parameter {p.name!r} has no gradient")
        v = st.velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.value)
            st.velocity[p.name] = v
        t = st._scratch[:p.value.size].reshape(p.value.shape)
        v *= st.momentum
        v += p.grad
        if st.weight_decay:
            np.multiply(p.value, st.weight_decay, out=t)
            v += t
        np.multiply(v, lr, out=t)
        p.value -= t
    store.zero_grads()


def init_params(spec: ArchSpec, seed: int) -> ParamStore:
    """Fresh, deterministically initialized parameter store for the spec."""
    model = Model(spec)
    glorot_fill(model.store, seed)
    return model.store


def compute_loss_and_grads(model: Model, images: np.ndarray, labels: np.ndarray,
                           void_index: int = 255) -> float:
    """One forward/backward; accumulates parameter gradients in the store."""
    logits, _, ctx = model.forward_vars(images, training=True)
    loss, dlogits = ops.softmax_cross_entropy(logits.data, labels, void_index)
    if not np.isfinite(loss):
        for name, var in ctx.named:
            if not np.all(np.isfinite(var.data)):
                raise NumericError(f"non-finite loss; first non-finite tensor: {name}")
        raise NumericError("non-finite loss with finite activations (labels/loss)")
    backward(logits, dlogits)
    for name, leaf in ctx.leaves.items():
        if leaf.grad is not None:
            model.store[name].grad += leaf.grad
    return loss


def train_step(model: Model, batch: tuple[np.ndarray, np.ndarray],
               opt: SgdState, lr: float, void_index: int = 255) -> float:
    """Forward, backward, one SGD update. Deterministic for fixed inputs."""
    images, labels = batch
    loss = compute_loss_and_grads(model, images, labels, void_index)
    sgd_step(model.store, opt, lr)
    return loss
