"""Multiply-Adds accounting.

Convention (stated in every report): one multiply-add per multiply;
standard convolution costs out_pixels*kh*kw*c_in*c_out, depthwise
out_pixels*kh*kw*c, pointwise out_pixels*c_in*c_out; the atrous rate does
not change cost; batch norm, activations, resizes, pooling and biases
cost zero. Counts scale linearly with batch size.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .model import Model, TraceRow
from .plan import ArchSpec

CONVENTION = ("one multiply-add per multiply; conv=H*W*kh*kw*Cin*Cout, "
              "depthwise=H*W*kh*kw*C, pointwise=H*W*Cin*Cout; rate-free; "
              "BN/ReLU/resize/pool cost 0")


@dataclass
class CostReport:
    rows: list[TraceRow]
    input_shape: tuple[int, int, int, int]
    output_stride: int
    convention: str = CONVENTION

    @property
    def total(self) -> int:
        return sum(r.macs for r in self.rows)

    def per_layer(self) -> dict[str, int]:
        return {r.name: r.macs for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# convention: {self.convention}\n")
        buf.write(f"# input_shape: {'x'.join(str(d) for d in self.input_shape)}\n")
        buf.write(f"# output_stride: {self.output_stride}\n")
        buf.write("layer,out_n,out_c,out_h,out_w,multiply_adds\n")
        for r in self.rows:
            n, c, h, w = r.out_shape
            buf.write(f"{r.name},{n},{c},{h},{w},{r.macs}\n")
        buf.write(f"total,,,,,{self.total}\n")
        return buf.getvalue()


def count_multiply_adds(spec: ArchSpec, input_shape: tuple[int, int, int, int],
                        output_stride: int | None = None) -> CostReport:
    """Cost of one forward pass at the given input shape. No weights are
    needed: a zero-filled model is walked and per-layer costs recorded."""
    model = Model(spec, output_stride)
    trace: list[TraceRow] = []
    x = np.zeros(input_shape, dtype=np.float64)
    model.forward(x, training=False, trace=trace)
    return CostReport(rows=trace, input_shape=tuple(input_shape),
                      output_stride=model.output_stride)


def multiscale_cost(spec: ArchSpec, input_shape, scales: list[float],
                    flip: bool, output_stride: int | None = None) -> int:
    """Total Multiply-Adds of multi-scale (and flipped) inference."""
    model_os = output_stride or spec.target_output_stride
    n, c, h, w = input_shape
    total = 0
    for s in scales:
        hs = max(int(round(h * s)), model_os)
        ws = max(int(round(w * s)), model_os)
        total += count_multiply_adds(spec, (n, c, hs, ws), output_stride).total
    if flip:
        total *= 2
    return total
