"""Flat key=value run configuration.

Format: one `key = value` per line, `#` comments, dotted keys for nesting.
Unknown keys are hard errors so ablation sweeps cannot silently typo an
axis. Serialization is canonical (schema order), which makes configs and
checkpoints byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .plan import ArchSpec, toy_arch_spec


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split(",") if t.strip())


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.split(",") if t.strip())


def _parse_structure(s: str) -> tuple[tuple[int, int], ...]:
    """Decoder refine structure, e.g. '3x256,3x256' -> ((3,256),(3,256))."""
    out = []
    for tok in s.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            k, f = tok.split("x")
            out.append((int(k), int(f)))
        except ValueError:
            raise ConfigError(f"bad conv structure token {tok!r}; expected KxF")
    return tuple(out)


def _parse_taps(s: str) -> tuple[str, ...]:
    taps = tuple(t.strip() for t in s.split(",") if t.strip())
    for t in taps:
        if t not in ("conv2", "conv3"):
            raise ConfigError(f"unknown decoder tap {t!r}")
    return taps


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{k}x{f}" for k, f in v)
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RunConfig:
    # data
    train_manifest: str = ""
    val_manifest: str = ""
    void_index: int = 255
    # architecture
    backbone: str = "xception"
    widths: tuple[int, ...] = (32, 64, 128, 256)
    units_per_stage: int = 2
    deep_stem: bool = False
    output_stride: int = 16
    aspp_rates: tuple[int, ...] = (6, 12, 18)
    aspp_image_level: bool = True
    aspp_channels: int = 256
    decoder_enabled: bool = True
    decoder_reduce_channels: int = 48
    decoder_structure: tuple[tuple[int, int], ...] = ((3, 256), (3, 256))
    decoder_taps: tuple[str, ...] = ("conv2",)
    separable_heads: bool = False
    num_classes: int = 4
    bn_frozen: bool = False
    # optimization
    base_lr: float = 0.007
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 4e-5
    max_iter: int = 3000
    batch: int = 8
    crop: int = 64
    scale_min: float = 0.5
    scale_max: float = 2.0
    hflip_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1000
    # evaluation
    eval_os: int = 16
    eval_ms: tuple[float, ...] = (1.0,)
    eval_flip: bool = False
    eval_trimap: tuple[int, ...] = (1, 3, 5, 7)

    def arch_spec(self, output_stride: int | None = None) -> ArchSpec:
        return toy_arch_spec(
            num_classes=self.num_classes,
            backbone=self.backbone,
            widths=tuple(self.widths),
            units_per_stage=self.units_per_stage,
            deep_stem=self.deep_stem,
            target_output_stride=output_stride or self.output_stride,
            aspp_rates=self.aspp_rates,
            aspp_image_level=self.aspp_image_level,
            aspp_channels=self.aspp_channels,
            decoder_enabled=self.decoder_enabled,
            decoder_reduce_channels=self.decoder_reduce_channels,
            decoder_conv_structure=self.decoder_structure,
            decoder_low_level_taps=self.decoder_taps,
            separable_heads=self.separable_heads,
            bn_frozen=self.bn_frozen,
        )


# key -> (attribute, parser). Schema order is the canonical file order.
_SCHEMA: dict[str, tuple[str, callable]] = {
    "data.train_manifest": ("train_manifest", str),
    "data.val_manifest": ("val_manifest", str),
    "data.void_index": ("void_index", int),
    "arch.backbone": ("backbone", str),
    "arch.widths": ("widths", _parse_int_list),
    "arch.units_per_stage": ("units_per_stage", int),
    "arch.deep_stem": ("deep_stem", _parse_bool),
    "arch.output_stride": ("output_stride", int),
    "arch.aspp_rates": ("aspp_rates", _parse_int_list),
    "arch.aspp_image_level": ("aspp_image_level", _parse_bool),
    "arch.aspp_channels": ("aspp_channels", int),
    "arch.decoder.enabled": ("decoder_enabled", _parse_bool),
    "arch.decoder.reduce_channels": ("decoder_reduce_channels", int),
    "arch.decoder.structure": ("decoder_structure", _parse_structure),
    "arch.decoder.taps": ("decoder_taps", _parse_taps),
    "arch.separable_heads": ("separable_heads", _parse_bool),
    "arch.num_classes": ("num_classes", int),
    "arch.bn_frozen": ("bn_frozen", _parse_bool),
    "train.base_lr": ("base_lr", float),
    "train.power": ("power", float),
    "train.momentum": ("momentum", float),
    "train.weight_decay": ("weight_decay", float),
    "train.max_iter": ("max_iter", int),
    "train.batch": ("batch", int),
    "train.crop": ("crop", int),
    "train.scale_min": ("scale_min", float),
    "train.scale_max": ("scale_max", float),
    "train.hflip_prob": ("hflip_prob", float),
    "train.seed": ("seed", int),
    "train.checkpoint_every": ("checkpoint_every", int),
    "eval.os": ("eval_os", int),
    "eval.ms": ("eval_ms", _parse_float_list),
    "eval.flip": ("eval_flip", _parse_bool),
    "eval.trimap": ("eval_trimap", _parse_int_list),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in _SCHEMA.items()}
assert len(_ATTR_TO_KEY) == len(_SCHEMA)
assert set(_ATTR_TO_KEY) == {f.name for f in fields(RunConfig)}


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        attr, parser = _SCHEMA[key]
        if attr in values:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        try:
            values[attr] = parser(val)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {e}")
    return RunConfig(**values)


def load_config(path: str) -> RunConfig:
    try:
        text = open(path).read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    return parse_config_text(text)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, (attr, _) in _SCHEMA.items():
        lines.append(f"{key} = {_fmt(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def config_replace(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **kw)
