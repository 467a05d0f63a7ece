"""Named parameter registry with paired gradient storage.

Insertion order is the canonical order: initialization, SGD updates and
checkpoint serialization all walk it, so two stores built from the same
architecture agree entry by entry. Batch-norm running statistics live here
too, flagged non-trainable, so a checkpoint is one flat record set.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Param:
    __slots__ = ("name", "value", "grad", "trainable", "init")

    def __init__(self, name: str, shape: tuple[int, ...], trainable: bool, init: str):
        self.name = name
        self.value = np.zeros(shape, dtype=np.float64)
        self.grad = np.zeros(shape, dtype=np.float64)
        self.trainable = trainable
        self.init = init  # "conv" | "dwconv" | "one" | "zero"


class ParamStore:
    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, shape: tuple[int, ...], trainable: bool = True,
            init: str = "conv") -> Param:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        p = Param(name, shape, trainable, init)
        self._params[name] = p
        return p

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def num_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Fill from a name->array mapping; names and shapes must match."""
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ShapeError(f"parameter set mismatch: missing {sorted(missing)[:4]}, "
                             f"unexpected {sorted(extra)[:4]}")
        for name, p in self._params.items():
            v = values[name]
            if v.shape != p.value.shape:
                raise ShapeError(f"parameter {name!r}: shape {v.shape} vs expected "
                                 f"{p.value.shape}")
            p.value[...] = v


def glorot_fill(store: ParamStore, seed: int) -> None:
    """Deterministic init: conv weights uniform in +-sqrt(6/(fan_in+fan_out)),
    batch-norm scale 1 / shift 0 / mean 0 / variance 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    for p in store:
        if p.init in ("conv", "dwconv"):
            out_c, in_c, kh, kw = p.value.shape
            if p.init == "dwconv":
                # a depthwise kernel is C independent 1->1 convolutions, so
                # each filter's fan is its own kh*kw taps
                fan_in = fan_out = kh * kw
            else:
                fan_in = in_c * kh * kw
                fan_out = out_c * kh * kw
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            p.value[...] = rng.uniform(-bound, bound, size=p.value.shape)
        elif p.init == "one":
            p.value[...] = 1.0
        elif p.init == "zero":
            p.value[...] = 0.0
        else:
            raise ShapeError(f"unknown init tag {p.init!r} for {p.name!r}")
        p.grad[...] = 0.0
