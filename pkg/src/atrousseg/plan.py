"""Declarative architecture description and the output-stride planner.

A network is a stem plus a body of blocks, each with a nominal stride. The
planner walks them in order: once applying a block's nominal stride would
push the cumulative stride past the target, that stride is removed and the
running atrous rate absorbs it, so every later convolution dilates instead
of downsampling. The convolution that lost its stride keeps the incoming
rate (entry_rate); everything after it inside and beyond the block runs at
the multiplied rate — that split is what makes the dilated plan an exact
subsample-equivalent of the strided plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import PlanError

STANDARD_CONV = "standard_conv"
SEPARABLE_CONV = "separable_conv"
RESIDUAL_UNIT = "residual_unit"
XCEPTION_UNIT = "xception_unit"

BLOCK_KINDS = (STANDARD_CONV, SEPARABLE_CONV, RESIDUAL_UNIT, XCEPTION_UNIT)

# Reference output stride at which aspp_rates are quoted.
ASPP_REFERENCE_OS = 16


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    repeats: int
    channels: int
    nominal_stride: int
    has_skip: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise PlanError(f"unknown block kind {self.kind!r}")
        if self.nominal_stride not in (1, 2):
            raise PlanError(f"nominal_stride must be 1 or 2, got {self.nominal_stride}")
        if self.channels < 1 or self.repeats < 1:
            raise PlanError(f"bad block spec {self}")


@dataclass(frozen=True)
class ArchSpec:
    stem: tuple[BlockSpec, ...]
    body: tuple[BlockSpec, ...]
    target_output_stride: int = 16
    aspp_rates: tuple[int, ...] = (6, 12, 18)
    aspp_image_level: bool = True
    aspp_channels: int = 256
    decoder_enabled: bool = True
    decoder_reduce_channels: int = 48
    decoder_conv_structure: tuple[tuple[int, int], ...] = ((3, 256), (3, 256))
    decoder_low_level_taps: tuple[str, ...] = ("conv2",)
    separable_heads: bool = False
    num_classes: int = 21
    in_channels: int = 3
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    bn_frozen: bool = False

    def __post_init__(self):
        if not self.aspp_rates:
            raise PlanError("aspp_rates must be non-empty")
        if self.decoder_reduce_channels < 1:
            raise PlanError("decoder_reduce_channels must be >= 1")
        for tap in self.decoder_low_level_taps:
            if tap not in ("conv2", "conv3"):
                raise PlanError(f"unknown decoder tap {tap!r}")
        if self.num_classes < 2:
            raise PlanError("num_classes must be >= 2")

    @property
    def blocks(self) -> tuple[BlockSpec, ...]:
        return self.stem + self.body

    def with_output_stride(self, os: int) -> "ArchSpec":
        return replace(self, target_output_stride=os)


@dataclass(frozen=True)
class PlannedBlock:
    spec: BlockSpec
    stride: int        # stride the block actually applies
    entry_rate: int    # rate for convs up to and including the stride point
    rate: int          # rate for convs after the stride point (the block's rate)
    nominal_cum: int   # cumulative nominal stride after this block
    effective_cum: int  # cumulative effective stride after this block


@dataclass(frozen=True)
class PlannedArch:
    spec: ArchSpec
    blocks: tuple[PlannedBlock, ...]
    output_stride: int
    taps: dict[str, tuple[int, int]] = field(default_factory=dict)
    # taps: name -> (index of block whose output is tapped, tap output stride)


def plan_output_stride(spec: ArchSpec, target: int | None = None) -> PlannedArch:
    """Assign effective strides and atrous rates so the cumulative stride
    never exceeds the target; removed strides multiply into the rates."""
    target = spec.target_output_stride if target is None else target
    if target < 1:
        raise PlanError(f"target output stride must be >= 1, got {target}")
    nominal_product = math.prod(b.nominal_stride for b in spec.blocks)
    if nominal_product % target != 0:
        raise PlanError(f"target output stride {target} does not divide the nominal "
                        f"stride product {nominal_product}")
    planned: list[PlannedBlock] = []
    nom = eff = rate = 1
    for b in spec.blocks:
        s = b.nominal_stride
        nom *= s
        entry_rate = rate
        if eff * s <= target:
            eff *= s
            stride = s
        else:
            stride = 1
            rate *= s
        planned.append(PlannedBlock(spec=b, stride=stride, entry_rate=entry_rate,
                                    rate=rate, nominal_cum=nom, effective_cum=eff))
    if eff != target:
        raise PlanError(f"plan ended at output stride {eff}, target was {target}")
    taps: dict[str, tuple[int, int]] = {}
    for i, pb in enumerate(planned):
        if pb.nominal_cum == 4 and (i + 1 == len(planned)
                                    or planned[i + 1].spec.nominal_stride == 2):
            taps["conv2"] = (i, pb.effective_cum)
        if pb.nominal_cum == 8 and (i + 1 == len(planned)
                                    or planned[i + 1].spec.nominal_stride == 2):
            taps["conv3"] = (i, pb.effective_cum)
    return PlannedArch(spec=spec, blocks=tuple(planned), output_stride=target,
                       taps=taps)


def aspp_rates_for_os(base_rates: tuple[int, ...], os: int) -> tuple[int, ...]:
    """Scale the ASPP rates (quoted at output stride 16) to another output
    stride: halving the stride doubles the rates, and vice versa (ceiling)."""
    return tuple(max(1, math.ceil(r * ASPP_REFERENCE_OS / os)) for r in base_rates)


def toy_arch_spec(num_classes: int = 4,
                  backbone: str = "xception",
                  widths: tuple[int, int, int, int] = (32, 64, 128, 256),
                  units_per_stage: int = 2,
                  deep_stem: bool = False,
                  target_output_stride: int = 16,
                  **kwargs) -> ArchSpec:
    """Desk-scale backbone: stride-4 stem of two separable convs, then three
    stages (nominal OS 8/16/32) of units at the given widths."""
    if backbone not in ("xception", "residual"):
        raise PlanError(f"unknown backbone {backbone!r}")
    unit = XCEPTION_UNIT if backbone == "xception" else RESIDUAL_UNIT
    stem = [
        BlockSpec(SEPARABLE_CONV, repeats=1, channels=widths[0], nominal_stride=2),
        BlockSpec(SEPARABLE_CONV, repeats=1, channels=widths[0], nominal_stride=2),
    ]
    if deep_stem:
        stem.append(BlockSpec(SEPARABLE_CONV, repeats=2, channels=widths[0],
                              nominal_stride=1))
    body = [
        BlockSpec(unit, repeats=units_per_stage, channels=widths[1],
                  nominal_stride=2, has_skip=True),
        BlockSpec(unit, repeats=units_per_stage, channels=widths[2],
                  nominal_stride=2, has_skip=True),
        BlockSpec(unit, repeats=units_per_stage, channels=widths[3],
                  nominal_stride=2, has_skip=True),
    ]
    return ArchSpec(stem=tuple(stem), body=tuple(body),
                    target_output_stride=target_output_stride,
                    num_classes=num_classes, **kwargs)


def tiny_arch_spec(num_classes: int = 3, target_output_stride: int = 16,
                   **kwargs) -> ArchSpec:
    """Shrunken variant of the toy network used for exhaustive gradient
    checking: same structure, few enough parameters to finite-difference
    every single one."""
    defaults = dict(aspp_rates=(1, 2, 3), aspp_channels=16,
                    decoder_reduce_channels=6,
                    decoder_conv_structure=((3, 16), (3, 16)))
    defaults.update(kwargs)
    return toy_arch_spec(num_classes=num_classes, widths=(4, 4, 6, 8),
                         units_per_stage=1,
                         target_output_stride=target_output_stride, **defaults)
