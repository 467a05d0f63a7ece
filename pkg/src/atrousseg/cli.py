"""Command-line entry point: seg train|eval|infer|analyze|ablate.

Every subcommand is deterministic given (config, seed, inputs); re-running
a command overwrites its outputs with identical bytes. Exit codes:
0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import netpbm
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, config_replace, load_config, parse_config_text,
                     serialize_config)
from .data import augment, load_manifest, load_sample
from .errors import (ConfigError, DataError, MetricError, NumericError,
                     PlanError, ShapeError)
from .flops import count_multiply_adds, multiscale_cost
from .metrics import ConfusionMatrix, miou, void_distance
from .model import Model, predict_labels
from .params import glorot_fill
from .train import PolySchedule, SgdState, lr_at, train_step


def color_map(n: int = 256) -> np.ndarray:
    """Fixed palette (bit-reversal colormap); index 255 is the void color."""
    cmap = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        cmap[i] = (r, g, b)
    return cmap


PALETTE = color_map()


# ---------------------------------------------------------------------------
# training


def run_training(cfg: RunConfig, out_dir: str, resume: str | None = None,
                 log=lambda s: print(s, file=sys.stderr, flush=True)):
    """Train per config; writes checkpoints and a loss log CSV into out_dir.
    Returns (model, rows) where rows are (iter, lr, loss)."""
    if not cfg.train_manifest:
        raise ConfigError("train.manifest missing: set data.train_manifest")
    manifest = load_manifest(cfg.train_manifest, cfg.num_classes, cfg.void_index)
    os.makedirs(out_dir, exist_ok=True)
    spec = cfg.arch_spec()
    model = Model(spec)
    start_iter = 0
    if resume is not None:
        _, start_iter, values = load_checkpoint(resume)
        model.store.load_values(values)
        log(f"resumed from {resume} at iteration {start_iter}")
    else:
        glorot_fill(model.store, cfg.seed)
    sched = PolySchedule(cfg.base_lr, cfg.power, cfg.max_iter)
    opt = SgdState(cfg.momentum, cfg.weight_decay)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    samples = [load_sample(manifest, i) for i in range(len(manifest))]
    cfg_text = serialize_config(cfg)
    rows: list[tuple[int, float, float]] = []

    def save(to_path, iteration):
        save_checkpoint(to_path, cfg_text, iteration, model.store)

    def write_log():
        with open(os.path.join(out_dir, "loss_log.csv"), "w") as f:
            f.write("iter,lr,loss\n")
            for it, lr, loss in rows:
                f.write(f"{it},{lr!r},{loss!r}\n")

    try:
        for it in range(start_iter, cfg.max_iter):
            lr = lr_at(sched, it)
            idx = rng.integers(0, len(samples), size=cfg.batch)
            imgs, lbls = [], []
            for i in idx:
                s = augment(samples[int(i)], cfg.crop, (cfg.scale_min, cfg.scale_max),
                            cfg.hflip_prob, rng)
                imgs.append(s.image)
                lbls.append(s.label)
            batch = (np.concatenate(imgs, axis=0), np.stack(lbls, axis=0))
            loss = train_step(model, batch, opt, lr, cfg.void_index)
            rows.append((it, lr, loss))
            done = it + 1
            if done % 50 == 0 or done == cfg.max_iter:
                log(f"iter {done}/{cfg.max_iter} lr {lr:.5f} loss {loss:.4f}")
            if cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0 \
                    and done != cfg.max_iter:
                save(os.path.join(out_dir, f"checkpoint_{done:06d}.ckpt"), done)
    except NumericError:
        write_log()  # keep the partial log and any periodic checkpoints
        raise
    save(os.path.join(out_dir, "model.ckpt"), cfg.max_iter)
    write_log()
    return model, rows


def load_model_from_checkpoint(path: str, eval_os: int | None = None):
    config_text, iteration, values = load_checkpoint(path)
    cfg = parse_config_text(config_text)
    model = Model(cfg.arch_spec(), output_stride=eval_os)
    model.store.load_values(values)
    return model, cfg, iteration


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(model: Model, manifest, num_classes: int, void_index: int,
                   ms: tuple[float, ...], flip: bool,
                   trimap_widths: tuple[int, ...]):
    """mIOU / per-class IOU / per-width trimap mIOU over a manifest."""
    cm = ConfusionMatrix(num_classes)
    band_cms = {w: ConfusionMatrix(num_classes) for w in trimap_widths}
    for i in range(len(manifest)):
        s = load_sample(manifest, i)
        pred = predict_labels(model, s.image, scales=ms, flip=flip)[0]
        cm.add(s.label, pred, void_index)
        if trimap_widths:
            d = void_distance(s.label, void_index)
            for w in trimap_widths:
                band_cms[w].add(s.label, pred, void_index, where=d <= w)
    overall, per_class = miou(cm)
    trimap = {}
    for w in trimap_widths:
        if band_cms[w].counts.sum() > 0:
            trimap[w] = miou(band_cms[w])[0]
    return overall, per_class, trimap


def evaluate_pred_dir(pred_dir: str, manifest, num_classes: int, void_index: int,
                      trimap_widths: tuple[int, ...]):
    """Score saved label maps (one PGM per sample, named like the ground
    truth label file) instead of running a model."""
    cm = ConfusionMatrix(num_classes)
    band_cms = {w: ConfusionMatrix(num_classes) for w in trimap_widths}
    for i in range(len(manifest)):
        s = load_sample(manifest, i)
        pred_path = os.path.join(pred_dir, os.path.basename(manifest.pairs[i][1]))
        if not os.path.isfile(pred_path):
            raise DataError(f"prediction missing: {pred_path}")
        pred = netpbm.read_pgm(pred_path)
        if pred.shape != s.label.shape:
            raise ShapeError(f"{pred_path}: prediction shape {pred.shape} vs label "
                             f"{s.label.shape}")
        cm.add(s.label, pred, void_index)
        d = void_distance(s.label, void_index)
        for w in trimap_widths:
            band_cms[w].add(s.label, pred, void_index, where=d <= w)
    overall, per_class = miou(cm)
    trimap = {w: miou(band_cms[w])[0] for w in trimap_widths
              if band_cms[w].counts.sum() > 0}
    return overall, per_class, trimap


def metrics_csv(overall, per_class, trimap, multiply_adds) -> str:
    lines = ["metric,value"]
    lines.append(f"miou,{overall!r}")
    for k, v in enumerate(per_class):
        lines.append(f"iou_class_{k},{v!r}")
    for w in sorted(trimap):
        lines.append(f"trimap_miou_w{w},{trimap[w]!r}")
    lines.append(f"multiply_adds,{multiply_adds}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = config_replace(cfg, seed=args.seed)
    run_training(cfg, args.out, resume=args.resume)
    return 0


def cmd_eval(args) -> int:
    ckpt_cfg_text, _, values = load_checkpoint(args.ckpt)
    cfg = parse_config_text(ckpt_cfg_text)
    eval_os = args.eval_os if args.eval_os else cfg.eval_os
    ms = tuple(float(s) for s in args.ms.split(",")) if args.ms else cfg.eval_ms
    flip = bool(args.flip) or cfg.eval_flip
    trimap_widths = (tuple(int(w) for w in args.trimap.split(","))
                     if args.trimap else cfg.eval_trimap)
    manifest_path = args.data or cfg.val_manifest
    if not manifest_path:
        raise ConfigError("no validation manifest: set data.val_manifest or --data")
    manifest = load_manifest(manifest_path, cfg.num_classes, cfg.void_index)
    if args.pred_dir:
        overall, per_class, trimap = evaluate_pred_dir(
            args.pred_dir, manifest, cfg.num_classes, cfg.void_index, trimap_widths)
        macs = 0
    else:
        model = Model(cfg.arch_spec(), output_stride=eval_os)
        model.store.load_values(values)
        overall, per_class, trimap = evaluate_model(
            model, manifest, cfg.num_classes, cfg.void_index, ms, flip,
            trimap_widths)
        s0 = load_sample(manifest, 0)
        macs = multiscale_cost(cfg.arch_spec(), s0.image.shape, list(ms), flip,
                               eval_os)
    text = metrics_csv(overall, per_class, trimap, macs)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "metrics.csv")
    with open(out_path, "w") as f:
        f.write(text)
    sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    model, cfg, _ = load_model_from_checkpoint(args.ckpt, args.eval_os or None)
    rgb = netpbm.read_ppm(args.image)
    image = (rgb.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]
    ms = tuple(float(s) for s in args.ms.split(",")) if args.ms else (1.0,)
    pred = predict_labels(model, np.ascontiguousarray(image), scales=ms,
                          flip=bool(args.flip))[0]
    netpbm.write_pgm(args.out_prefix + ".label.pgm", pred)
    overlay = (0.5 * rgb.astype(np.float64)
               + 0.5 * PALETTE[pred].astype(np.float64))
    netpbm.write_ppm(args.out_prefix + ".overlay.ppm",
                     np.round(overlay).astype(np.uint8))
    return 0


def plan_dump(cfg: RunConfig, eval_os: int | None = None) -> str:
    from .plan import aspp_rates_for_os, plan_output_stride
    spec = cfg.arch_spec(eval_os)
    planned = plan_output_stride(spec)
    lines = [f"output_stride: {planned.output_stride}"]
    lines.append("block,kind,channels,nominal_stride,stride,entry_rate,rate,"
                 "cum_nominal,cum_effective")
    for i, pb in enumerate(planned.blocks):
        b = pb.spec
        lines.append(f"block{i},{b.kind},{b.channels},{b.nominal_stride},"
                     f"{pb.stride},{pb.entry_rate},{pb.rate},{pb.nominal_cum},"
                     f"{pb.effective_cum}")
    rates = aspp_rates_for_os(spec.aspp_rates, planned.output_stride)
    lines.append(f"aspp_rates: {','.join(str(r) for r in rates)}")
    for name, (bi, os_) in sorted(planned.taps.items()):
        lines.append(f"tap {name}: block{bi} at output stride {os_}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    eval_os = args.eval_os or None
    report = count_multiply_adds(cfg.arch_spec(), (1, cfg.arch_spec().in_channels,
                                                   cfg.crop, cfg.crop), eval_os)
    text = plan_dump(cfg, eval_os) + report.to_csv()
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "cost_report.csv"), "w") as f:
            f.write(text)
    return 0


# ---------------------------------------------------------------------------
# ablation harness

TABLE2_ROWS = [
    # (conv3 merged?, structure)
    (False, ((3, 256),)),
    (False, ((3, 256), (3, 256))),
    (False, ((3, 256), (3, 256), (3, 256))),
    (False, ((3, 128),)),
    (False, ((1, 256),)),
    (True, ((3, 256),)),
]

TABLE3_ROWS = [
    # (train_os, eval_os, decoder, ms, flip)
    (16, 16, False, False, False),
    (16, 8, False, False, False),
    (16, 8, False, True, False),
    (16, 8, False, True, True),
    (16, 16, True, False, False),
    (16, 16, True, True, False),
    (16, 16, True, True, True),
    (16, 8, True, False, False),
    (16, 8, True, True, False),
    (16, 8, True, True, True),
    (32, 32, False, False, False),
    (32, 32, True, False, False),
    (32, 16, True, False, False),
    (32, 8, True, False, False),
]


def _train_and_eval(cfg: RunConfig, out_dir: str, tag: str, eval_os: int,
                    ms: tuple[float, ...], flip: bool,
                    cache: dict, log) -> tuple[float, int]:
    """Train (cached per tag) then evaluate one configuration row."""
    if tag not in cache:
        run_dir = os.path.join(out_dir, f"run_{tag}")
        log(f"[ablate] training {tag}")
        model, _ = run_training(cfg, run_dir, log=log)
        cache[tag] = (model, cfg)
    model, tcfg = cache[tag]
    manifest = load_manifest(tcfg.val_manifest, tcfg.num_classes, tcfg.void_index)
    eval_model = Model(tcfg.arch_spec(), output_stride=eval_os)
    eval_model.store.load_values({p.name: p.value for p in model.store})
    overall, _, _ = evaluate_model(eval_model, manifest, tcfg.num_classes,
                                   tcfg.void_index, ms, flip, ())
    s0 = load_sample(manifest, 0)
    macs = multiscale_cost(tcfg.arch_spec(), s0.image.shape, list(ms), flip,
                           eval_os)
    return overall, macs


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = config_replace(cfg, seed=args.seed)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    log = lambda s: print(s, file=sys.stderr, flush=True)
    cache: dict = {}
    lines: list[str] = []
    axis = args.axis

    if axis == "reduce_channels":
        sweep = (8, 16, 32, 48, 64)
        results = []
        for ch in sweep:
            c = config_replace(cfg, decoder_enabled=True, decoder_reduce_channels=ch)
            m, _ = _train_and_eval(c, out_dir, f"reduce{ch}", c.eval_os, (1.0,),
                                   False, cache, log)
            results.append((ch, m))
        best = max(range(len(results)), key=lambda i: results[i][1])
        lines.append("channels,miou,best")
        for i, (ch, m) in enumerate(results):
            lines.append(f"{ch},{m!r},{'*' if i == best else ''}")

    elif axis == "decoder_structure":
        lines.append("conv2,conv3,structure,miou")
        for use_conv3, structure in TABLE2_ROWS:
            taps = ("conv2", "conv3") if use_conv3 else ("conv2",)
            c = config_replace(cfg, decoder_enabled=True, decoder_taps=taps,
                               decoder_structure=structure)
            tag = ("c23_" if use_conv3 else "c2_") + \
                  "_".join(f"{k}x{f}" for k, f in structure)
            m, _ = _train_and_eval(c, out_dir, tag, c.eval_os, (1.0,), False,
                                   cache, log)
            struct_txt = "+".join(f"[{k}x{k},{f}]" for k, f in structure)
            lines.append(f"x,{'x' if use_conv3 else ''},{struct_txt},{m!r}")

    elif axis == "os_matrix":
        lines.append("train_os,eval_os,decoder,ms,flip,miou,multiply_adds")
        for train_os, eval_os, dec, ms_on, flip in TABLE3_ROWS:
            c = config_replace(cfg, output_stride=train_os, decoder_enabled=dec)
            tag = f"os{train_os}_{'dec' if dec else 'nodec'}"
            ms = cfg.eval_ms if ms_on else (1.0,)
            m, macs = _train_and_eval(c, out_dir, tag, eval_os, ms, flip, cache,
                                      log)
            lines.append(f"{train_os},{eval_os},{'x' if dec else ''},"
                         f"{'x' if ms_on else ''},{'x' if flip else ''},"
                         f"{m!r},{macs}")

    elif axis == "sc":
        lines.append("train_os,eval_os,decoder,sc,miou,multiply_adds")
        for sc in (False, True):
            c = config_replace(cfg, decoder_enabled=True, separable_heads=sc)
            tag = f"sc{int(sc)}"
            for eval_os in (16, 8):
                m, macs = _train_and_eval(c, out_dir, tag, eval_os, (1.0,),
                                          False, cache, log)
                lines.append(f"{c.output_stride},{eval_os},x,"
                             f"{'x' if sc else ''},{m!r},{macs}")
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}")

    table = "\n".join(lines) + "\n"
    path = os.path.join(out_dir, f"table_{axis}.csv")
    with open(path, "w") as f:
        f.write(table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seg",
                                description="desk-scale atrous encoder-decoder "
                                            "segmentation")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model per the config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--data", default=None, help="override validation manifest")
    e.add_argument("--eval-os", type=int, default=None)
    e.add_argument("--ms", default=None, help="comma-separated scales")
    e.add_argument("--flip", action="store_true")
    e.add_argument("--trimap", default=None, help="comma-separated band widths")
    e.add_argument("--pred-dir", default=None,
                   help="score saved PGM predictions instead of running the model")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="segment one PPM image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out-prefix", required=True)
    i.add_argument("--eval-os", type=int, default=None)
    i.add_argument("--ms", default=None)
    i.add_argument("--flip", action="store_true")
    i.set_defaults(fn=cmd_infer)

    a = sub.add_parser("analyze", help="plan + Multiply-Adds report, no weights")
    a.add_argument("--config", required=True)
    a.add_argument("--out", default=None)
    a.add_argument("--eval-os", type=int, default=None)
    a.set_defaults(fn=cmd_analyze)

    b = sub.add_parser("ablate", help="reproduce an ablation table at desk scale")
    b.add_argument("--config", required=True)
    b.add_argument("--axis", required=True,
                   choices=["reduce_channels", "decoder_structure", "os_matrix",
                            "sc"])
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(fn=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, PlanError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, MetricError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
