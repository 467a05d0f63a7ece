"""Layer graph construction and execution for the encoder-decoder model.

The model is built from an ArchSpec plus a planned output stride: a stem
and body of blocks (with taps at output stride 4 and 8), an atrous
spatial pyramid pooling head projecting to a fixed-width encoder output,
and either the decoder (upsample, merge reduced low-level features,
refine, classify, upsample) or the naive classify-then-upsample path.

Weights are geometry-independent: the same parameter set runs at any
planned output stride, which is how train-OS/eval-OS splits work. Every
op appends a (name, output shape, multiply-adds) row to the trace when
one is requested; multiply-adds follow the convention that convolutions
cost out_pixels * kernel_taps * c_in * c_out and everything else is free.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import (Var, vadd, vbatch_norm, vconcat, vconv2d, vdepthwise,
                       vglobal_avg_pool, vpointwise, vrelu, vresize)
from .errors import ShapeError
from .params import ParamStore
from .plan import (ArchSpec, PlannedArch, RESIDUAL_UNIT, SEPARABLE_CONV,
                   STANDARD_CONV, XCEPTION_UNIT, aspp_rates_for_os,
                   plan_output_stride)


class TraceRow:
    __slots__ = ("name", "out_shape", "macs")

    def __init__(self, name, out_shape, macs):
        self.name = name
        self.out_shape = tuple(int(d) for d in out_shape)
        self.macs = int(macs)

    def __repr__(self):
        return f"TraceRow({self.name}, {self.out_shape}, {self.macs})"


class _Ctx:
    """Per-forward state: leaf Vars for parameters, optional trace, and the
    list of named intermediate values used for non-finite diagnostics."""

    def __init__(self, store: ParamStore, training: bool, trace: list | None):
        self.store = store
        self.training = training
        self.trace = trace
        self.leaves: dict[str, Var] = {}
        self.named: list[tuple[str, Var]] = []

    def leaf(self, name: str) -> Var:
        v = self.leaves.get(name)
        if v is None:
            v = Var(self.store[name].value, name=name)
            self.leaves[name] = v
        return v

    def record(self, name: str, var: Var, macs: int = 0) -> Var:
        var.name = name
        self.named.append((name, var))
        if self.trace is not None:
            self.trace.append(TraceRow(name, var.data.shape, macs))
        return var


class _BnState:
    __slots__ = ("mean", "var", "epsilon", "momentum", "frozen")

    def __init__(self, mean, var, epsilon, momentum, frozen):
        self.mean = mean
        self.var = var
        self.epsilon = epsilon
        self.momentum = momentum
        self.frozen = frozen


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, channels: int, spec: ArchSpec):
        self.name = name
        trainable = not spec.bn_frozen
        store.add(f"{name}.gamma", (channels,), trainable, "one")
        store.add(f"{name}.beta", (channels,), trainable, "zero")
        store.add(f"{name}.mean", (channels,), False, "zero")
        store.add(f"{name}.var", (channels,), False, "one")
        self.epsilon = spec.bn_epsilon
        self.momentum = spec.bn_momentum
        self.frozen = spec.bn_frozen

    def forward(self, ctx: _Ctx, x: Var) -> Var:
        st = _BnState(ctx.store[f"{self.name}.mean"].value,
                      ctx.store[f"{self.name}.var"].value,
                      self.epsilon, self.momentum, self.frozen)
        y = vbatch_norm(x, ctx.leaf(f"{self.name}.gamma"),
                        ctx.leaf(f"{self.name}.beta"), st, ctx.training)
        return ctx.record(self.name, y)


class Conv:
    """Standard convolution (1x1 goes through the pointwise fast path),
    optionally followed by batch norm and ReLU."""

    def __init__(self, store, name, in_ch, out_ch, k, spec, stride=1, rate=1,
                 bn=True, relu=True):
        self.name = name
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.rate = stride, rate
        store.add(f"{name}.w", (out_ch, in_ch, k, k), True, "conv")
        self.geometry = ops.ConvGeometry(stride=stride, rate=rate)
        self.bn = BatchNorm(store, f"{name}.bn", out_ch, spec) if bn else None
        self.relu = relu
        self._scratch: dict = {}

    def forward(self, ctx: _Ctx, x: Var) -> Var:
        w = ctx.leaf(f"{self.name}.w")
        if self.k == 1:
            y = vpointwise(x, w, stride=self.stride)
        else:
            y = vconv2d(x, w, self.geometry, self._scratch)
        n, _, oh, ow = y.data.shape
        macs = n * oh * ow * self.k * self.k * self.in_ch * self.out_ch
        y = ctx.record(self.name, y, macs)
        if self.bn is not None:
            y = self.bn.forward(ctx, y)
        if self.relu:
            y = ctx.record(f"{self.name}.relu", vrelu(y))
        return y


class SepConv:
    """Depthwise (possibly strided/atrous) then pointwise convolution, with
    batch norm + ReLU after each stage."""

    def __init__(self, store, name, in_ch, out_ch, spec, k=3, stride=1, rate=1):
        self.name = name
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        store.add(f"{name}.dw.w", (in_ch, 1, k, k), True, "dwconv")
        store.add(f"{name}.pw.w", (out_ch, in_ch, 1, 1), True, "conv")
        self.geometry = ops.ConvGeometry(stride=stride, rate=rate)
        self.dw_bn = BatchNorm(store, f"{name}.dw.bn", in_ch, spec)
        self.pw_bn = BatchNorm(store, f"{name}.pw.bn", out_ch, spec)
        self._scratch: dict = {}

    def forward(self, ctx: _Ctx, x: Var) -> Var:
        h = vdepthwise(x, ctx.leaf(f"{self.name}.dw.w"), self.geometry,
                       self._scratch)
        n, c, oh, ow = h.data.shape
        h = ctx.record(f"{self.name}.dw", h, n * oh * ow * self.k * self.k * c)
        h = self.dw_bn.forward(ctx, h)
        h = ctx.record(f"{self.name}.dw.relu", vrelu(h))
        h = vpointwise(h, ctx.leaf(f"{self.name}.pw.w"))
        h = ctx.record(f"{self.name}.pw", h, n * oh * ow * self.in_ch * self.out_ch)
        h = self.pw_bn.forward(ctx, h)
        return ctx.record(f"{self.name}.pw.relu", vrelu(h))


class _Shortcut:
    """Projection shortcut: strided 1x1 conv + BN when the unit changes
    shape, otherwise the identity. Whether a projection exists depends on
    the unit's nominal geometry, never on the planned stride, so the same
    parameter set serves every output-stride plan."""

    def __init__(self, store, name, in_ch, out_ch, spec, stride, nominal_stride):
        self.identity = (in_ch == out_ch and nominal_stride == 1)
        self.conv = None
        if not self.identity:
            self.conv = Conv(store, f"{name}.skip", in_ch, out_ch, 1, spec,
                             stride=stride, bn=True, relu=False)

    def forward(self, ctx, x):
        return x if self.identity else self.conv.forward(ctx, x)


class XceptionUnit:
    """Three separable convolutions with a skip connection; strided variants
    put the stride on the last separable conv (no max pooling anywhere)."""

    def __init__(self, store, name, in_ch, out_ch, spec, stride, entry_rate,
                 nominal_stride):
        self.name = name
        # convs up to and including the strided one run at the incoming rate;
        # once the stride point has passed, the accumulated rate applies
        self.sep1 = SepConv(store, f"{name}.sep1", in_ch, out_ch, spec,
                            stride=1, rate=entry_rate)
        self.sep2 = SepConv(store, f"{name}.sep2", out_ch, out_ch, spec,
                            stride=1, rate=entry_rate)
        self.sep3 = SepConv(store, f"{name}.sep3", out_ch, out_ch, spec,
                            stride=stride, rate=entry_rate)
        self.shortcut = _Shortcut(store, name, in_ch, out_ch, spec, stride,
                                  nominal_stride)

    def forward(self, ctx, x):
        h = self.sep1.forward(ctx, x)
        h = self.sep2.forward(ctx, h)
        h = self.sep3.forward(ctx, h)
        s = self.shortcut.forward(ctx, x)
        return ctx.record(f"{self.name}.add", vadd(h, s))


class ResidualUnit:
    """Two 3x3 convolutions with a skip connection (basic residual block);
    the stride sits on the first conv."""

    def __init__(self, store, name, in_ch, out_ch, spec, stride, entry_rate, rate,
                 nominal_stride):
        self.name = name
        self.conv1 = Conv(store, f"{name}.conv1", in_ch, out_ch, 3, spec,
                          stride=stride, rate=entry_rate)
        self.conv2 = Conv(store, f"{name}.conv2", out_ch, out_ch, 3, spec,
                          rate=rate, relu=False)
        self.shortcut = _Shortcut(store, name, in_ch, out_ch, spec, stride,
                                  nominal_stride)

    def forward(self, ctx, x):
        h = self.conv1.forward(ctx, x)
        h = self.conv2.forward(ctx, h)
        s = self.shortcut.forward(ctx, x)
        h = ctx.record(f"{self.name}.add", vadd(h, s))
        return ctx.record(f"{self.name}.relu", vrelu(h))


class Block:
    """One planned block: `repeats` units, stride applied by the first."""

    def __init__(self, store, name, in_ch, planned_block, spec):
        pb = planned_block
        b = pb.spec
        self.name = name
        self.units = []
        self.out_ch = b.channels
        for u in range(b.repeats):
            stride = pb.stride if u == 0 else 1
            nominal = b.nominal_stride if u == 0 else 1
            entry = pb.entry_rate if u == 0 else pb.rate
            uin = in_ch if u == 0 else b.channels
            uname = f"{name}.u{u}"
            if b.kind == XCEPTION_UNIT:
                self.units.append(XceptionUnit(store, uname, uin, b.channels, spec,
                                               stride, entry, nominal))
            elif b.kind == RESIDUAL_UNIT:
                self.units.append(ResidualUnit(store, uname, uin, b.channels, spec,
                                               stride, entry, pb.rate, nominal))
            elif b.kind == SEPARABLE_CONV:
                self.units.append(SepConv(store, uname, uin, b.channels, spec,
                                          stride=stride, rate=entry))
            elif b.kind == STANDARD_CONV:
                self.units.append(Conv(store, uname, uin, b.channels, 3, spec,
                                       stride=stride, rate=entry))

    def forward(self, ctx, x):
        for u in self.units:
            x = u.forward(ctx, x)
        return x


class _HeadConv:
    """3x3 head convolution: standard, or atrous-separable when the
    separable-heads flag is on. Output shape is identical either way."""

    def __init__(self, store, name, in_ch, out_ch, spec, k, rate=1):
        if spec.separable_heads and k > 1:
            self.inner = SepConv(store, name, in_ch, out_ch, spec, k=k, rate=rate)
        else:
            self.inner = Conv(store, name, in_ch, out_ch, k, spec, rate=rate)

    def forward(self, ctx, x):
        return self.inner.forward(ctx, x)


class Aspp:
    """Parallel 1x1 / atrous 3x3 / image-level branches, concatenated and
    projected to the encoder output width."""

    def __init__(self, store, name, in_ch, spec: ArchSpec, output_stride: int):
        self.name = name
        self.spec = spec
        c = spec.aspp_channels
        self.rates = aspp_rates_for_os(spec.aspp_rates, output_stride)
        self.b0 = Conv(store, f"{name}.b0", in_ch, c, 1, spec)
        self.atrous = [
            _HeadConv(store, f"{name}.b{i + 1}", in_ch, c, spec, 3, rate=r)
            for i, r in enumerate(self.rates)
        ]
        self.pool_conv = None
        if spec.aspp_image_level:
            self.pool_conv = Conv(store, f"{name}.pool", in_ch, c, 1, spec)
        n_branches = 1 + len(self.rates) + (1 if spec.aspp_image_level else 0)
        self.proj = Conv(store, f"{name}.proj", c * n_branches, c, 1, spec)

    def forward(self, ctx, x):
        parts = [self.b0.forward(ctx, x)]
        for branch in self.atrous:
            parts.append(branch.forward(ctx, x))
        if self.pool_conv is not None:
            p = ctx.record(f"{self.name}.gap", vglobal_avg_pool(x))
            p = self.pool_conv.forward(ctx, p)
            p = ctx.record(f"{self.name}.pool.resize",
                           vresize(p, x.data.shape[2], x.data.shape[3]))
            parts.append(p)
        h = ctx.record(f"{self.name}.concat", vconcat(parts))
        return self.proj.forward(ctx, h)


class Decoder:
    """Upsample encoder output to each tap resolution (deepest first),
    concatenate with the 1x1-reduced low-level features, refine, classify,
    and upsample to input resolution."""

    def __init__(self, store, name, enc_ch, tap_channels: dict[str, int],
                 spec: ArchSpec):
        self.name = name
        self.spec = spec
        # merge deepest (coarsest) tap first: conv3 before conv2
        order = [t for t in ("conv3", "conv2") if t in spec.decoder_low_level_taps]
        self.merge_order = order
        self.stages = []
        ch = enc_ch
        for tap in order:
            reduce = Conv(store, f"{name}.{tap}.reduce", tap_channels[tap],
                          spec.decoder_reduce_channels, 1, spec)
            refines = []
            rin = ch + spec.decoder_reduce_channels
            for i, (k, f) in enumerate(spec.decoder_conv_structure):
                refines.append(_HeadConv(store, f"{name}.{tap}.refine{i}",
                                         rin, f, spec, k))
                rin = f
            self.stages.append((tap, reduce, refines))
            ch = rin
        self.out_ch = ch

    def forward(self, ctx, enc, taps: dict[str, Var]):
        h = enc
        for tap, reduce, refines in self.stages:
            t = taps[tap]
            th, tw = t.data.shape[2], t.data.shape[3]
            if (h.data.shape[2], h.data.shape[3]) != (th, tw):
                h = ctx.record(f"{self.name}.{tap}.resize", vresize(h, th, tw))
            r = reduce.forward(ctx, t)
            h = ctx.record(f"{self.name}.{tap}.concat", vconcat([h, r]))
            for refine in refines:
                h = refine.forward(ctx, h)
        return h


class Model:
    """A planned, parameterized network. Construction registers every
    parameter (deterministic order); values start at zero until filled by
    an initializer or a checkpoint."""

    def __init__(self, spec: ArchSpec, output_stride: int | None = None):
        self.spec = spec
        self.planned: PlannedArch = plan_output_stride(spec, output_stride)
        self.output_stride = self.planned.output_stride
        self.store = ParamStore()
        st = self.store
        self.blocks = []
        in_ch = spec.in_channels
        for i, pb in enumerate(self.planned.blocks):
            blk = Block(st, f"block{i}", in_ch, pb, spec)
            self.blocks.append(blk)
            in_ch = blk.out_ch
        self.backbone_out_ch = in_ch
        self.aspp = Aspp(st, "aspp", in_ch, spec, self.output_stride)
        tap_channels = {name: self.blocks[bi].out_ch
                        for name, (bi, _) in self.planned.taps.items()}
        self.decoder = None
        head_ch = spec.aspp_channels
        if spec.decoder_enabled:
            for tap in spec.decoder_low_level_taps:
                if tap not in tap_channels:
                    raise ShapeError(f"decoder tap {tap!r} not exposed by the backbone")
            self.decoder = Decoder(st, "decoder", spec.aspp_channels, tap_channels,
                                   spec)
            head_ch = self.decoder.out_ch
        self.logits_conv = Conv(st, "logits", head_ch, spec.num_classes, 1, spec,
                                bn=False, relu=False)

    # ------------------------------------------------------------------
    def forward_vars(self, x: np.ndarray, training: bool = False,
                     trace: list | None = None,
                     backbone_only: bool = False):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (n,{self.spec.in_channels},h,w) input, got "
                             f"{x.shape}")
        if x.shape[2] < self.output_stride or x.shape[3] < self.output_stride:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} smaller than output "
                             f"stride {self.output_stride}")
        ctx = _Ctx(self.store, training, trace)
        h = Var(np.ascontiguousarray(x, dtype=np.float64), name="input")
        taps: dict[str, Var] = {}
        tap_at = {bi: name for name, (bi, _) in self.planned.taps.items()}
        for i, blk in enumerate(self.blocks):
            h = blk.forward(ctx, h)
            if i in tap_at:
                taps[tap_at[i]] = h
        if backbone_only:
            return h, taps, ctx
        enc = self.aspp.forward(ctx, h)
        if self.decoder is not None:
            dec = self.decoder.forward(ctx, enc, taps)
        else:
            dec = enc
        logits = self.logits_conv.forward(ctx, dec)
        in_h, in_w = x.shape[2], x.shape[3]
        if logits.data.shape[2:] != (in_h, in_w):
            logits = ctx.record("logits.resize", vresize(logits, in_h, in_w))
        return logits, taps, ctx

    def forward(self, x: np.ndarray, training: bool = False,
                trace: list | None = None) -> np.ndarray:
        logits, _, _ = self.forward_vars(x, training, trace)
        return logits.data

    def backbone_features(self, x: np.ndarray, training: bool = False):
        """Final backbone feature map plus the tap features (arrays)."""
        h, taps, _ = self.forward_vars(x, training, backbone_only=True)
        return h.data, {k: v.data for k, v in taps.items()}


def predict_probs(model: Model, x: np.ndarray) -> np.ndarray:
    return ops.softmax(model.forward(x, training=False), axis=1)


def predict_multiscale(model: Model, x: np.ndarray, scales: list[float],
                       flip: bool = False) -> np.ndarray:
    """Average softmax probabilities over rescaled (and optionally mirrored)
    copies of the input, resized back to the input resolution."""
    if not scales:
        raise ShapeError("predict_multiscale: scales must be non-empty")
    from .tensor import bilinear_resize
    n, _, h, w = x.shape
    os_ = model.output_stride
    acc = np.zeros((n, model.spec.num_classes, h, w), dtype=np.float64)
    count = 0
    for s in scales:
        hs = max(int(round(h * s)), os_)
        ws = max(int(round(w * s)), os_)
        xi = bilinear_resize(x, hs, ws) if (hs, ws) != (h, w) else x
        for mirrored in ((False, True) if flip else (False,)):
            xf = xi[:, :, :, ::-1] if mirrored else xi
            p = predict_probs(model, np.ascontiguousarray(xf))
            if mirrored:
                p = p[:, :, :, ::-1]
            if p.shape[2:] != (h, w):
                p = bilinear_resize(np.ascontiguousarray(p), h, w)
            acc += p
            count += 1
    return acc / count


def predict_labels(model: Model, x: np.ndarray, scales=(1.0,),
                   flip: bool = False) -> np.ndarray:
    """Argmax class map at input resolution; ties break toward the lower
    class index (numpy argmax convention)."""
    probs = predict_multiscale(model, x, list(scales), flip)
    return probs.argmax(axis=1).astype(np.uint8)
