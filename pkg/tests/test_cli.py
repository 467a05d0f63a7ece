"""End-to-end CLI exercises on a miniature configuration."""

import os
import shutil

import numpy as np
import pytest

from atrousseg import netpbm
from atrousseg.cli import main
from atrousseg.config import RunConfig, config_replace, serialize_config
from atrousseg.data import gen_shapes_dataset, load_manifest, write_manifest


def tiny_config(tmp_path, **overrides):
    root = str(tmp_path / "data")
    manifest = gen_shapes_dataset(8, 32, 4, seed=11, root=root)
    train_m = os.path.join(root, "train.txt")
    val_m = os.path.join(root, "val.txt")
    write_manifest(train_m, manifest.pairs[:6])
    write_manifest(val_m, manifest.pairs[6:])
    fields = dict(
        train_manifest=train_m, val_manifest=val_m,
        widths=(4, 4, 6, 8), units_per_stage=1, aspp_channels=16,
        aspp_rates=(1, 2, 3), decoder_reduce_channels=6,
        decoder_structure=((3, 16), (3, 16)),
        max_iter=8, batch=2, crop=32, checkpoint_every=4, seed=3,
        eval_trimap=(1, 3))
    fields.update(overrides)
    cfg = config_replace(RunConfig(), **fields)
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as f:
        f.write(serialize_config(cfg))
    return path, cfg, val_m


def test_train_eval_infer_pipeline(tmp_path):
    cfg_path, cfg, val_m = tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert main(["train", "--config", cfg_path, "--out", out]) == 0
    assert os.path.isfile(os.path.join(out, "model.ckpt"))
    assert os.path.isfile(os.path.join(out, "checkpoint_000004.ckpt"))
    log = open(os.path.join(out, "loss_log.csv")).read().splitlines()
    assert log[0] == "iter,lr,loss"
    assert len(log) == 1 + cfg.max_iter

    eval_out = str(tmp_path / "eval")
    assert main(["eval", "--ckpt", os.path.join(out, "model.ckpt"),
                 "--out", eval_out]) == 0
    metrics = open(os.path.join(eval_out, "metrics.csv")).read().splitlines()
    names = [l.split(",")[0] for l in metrics]
    assert names[0] == "metric"
    assert "miou" in names and "iou_class_0" in names
    assert any(n.startswith("trimap_miou_w") for n in names)
    assert "multiply_adds" in names

    img_path = os.path.join(os.path.dirname(val_m), "img_0006.ppm")
    prefix = str(tmp_path / "pred")
    assert main(["infer", "--ckpt", os.path.join(out, "model.ckpt"),
                 "--image", img_path, "--out-prefix", prefix]) == 0
    lbl = netpbm.read_pgm(prefix + ".label.pgm")
    assert lbl.shape == (32, 32)
    overlay = netpbm.read_ppm(prefix + ".overlay.ppm")
    assert overlay.shape == (32, 32, 3)
    # byte-reproducible outputs
    first = open(prefix + ".label.pgm", "rb").read()
    assert main(["infer", "--ckpt", os.path.join(out, "model.ckpt"),
                 "--image", img_path, "--out-prefix", prefix]) == 0
    assert open(prefix + ".label.pgm", "rb").read() == first


def test_training_is_deterministic(tmp_path):
    cfg_path, _, _ = tiny_config(tmp_path)
    out1 = str(tmp_path / "r1")
    out2 = str(tmp_path / "r2")
    assert main(["train", "--config", cfg_path, "--out", out1]) == 0
    assert main(["train", "--config", cfg_path, "--out", out2]) == 0
    assert (open(os.path.join(out1, "loss_log.csv"), "rb").read()
            == open(os.path.join(out2, "loss_log.csv"), "rb").read())
    assert (open(os.path.join(out1, "model.ckpt"), "rb").read()
            == open(os.path.join(out2, "model.ckpt"), "rb").read())


def test_resume_continues_schedule(tmp_path):
    cfg_path, cfg, _ = tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert main(["train", "--config", cfg_path, "--out", out]) == 0
    mid = os.path.join(out, "checkpoint_000004.ckpt")
    out2 = str(tmp_path / "resumed")
    assert main(["train", "--config", cfg_path, "--out", out2,
                 "--resume", mid]) == 0
    log = open(os.path.join(out2, "loss_log.csv")).read().splitlines()
    # continues at iteration 4 with the schedule's lr for iteration 4
    assert log[1].startswith("4,")
    from atrousseg.train import PolySchedule, lr_at
    lr4 = lr_at(PolySchedule(cfg.base_lr, cfg.power, cfg.max_iter), 4)
    assert log[1].split(",")[1] == repr(lr4)


def test_eval_pred_dir_perfect_oracle(tmp_path):
    cfg_path, cfg, val_m = tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert main(["train", "--config", cfg_path, "--out", out]) == 0
    # copy ground-truth labels as predictions, with void replaced by class 0
    manifest = load_manifest(val_m, 4)
    pred_dir = str(tmp_path / "oracle")
    os.makedirs(pred_dir)
    for img, lbl in manifest.pairs:
        arr = netpbm.read_pgm(os.path.join(manifest.root, lbl))
        arr = np.where(arr == 255, 0, arr).astype(np.uint8)
        netpbm.write_pgm(os.path.join(pred_dir, os.path.basename(lbl)), arr)
    eval_out = str(tmp_path / "eval")
    assert main(["eval", "--ckpt", os.path.join(out, "model.ckpt"),
                 "--out", eval_out, "--pred-dir", pred_dir]) == 0
    rows = dict(l.split(",") for l in
                open(os.path.join(eval_out, "metrics.csv")).read().splitlines()[1:])
    assert float(rows["miou"]) == 1.0


def test_analyze_plan_and_reports(tmp_path, capsys):
    cfg_path, cfg, _ = tiny_config(tmp_path)
    assert main(["analyze", "--config", cfg_path]) == 0
    out = capsys.readouterr().out
    assert "output_stride: 16" in out
    assert "total" in out
    # OS-8 plan dilates the last two blocks at rates 2 and 4
    assert main(["analyze", "--config", cfg_path, "--eval-os", "8"]) == 0
    out8 = capsys.readouterr().out
    lines = out8.splitlines()
    start = lines.index("block,kind,channels,nominal_stride,stride,entry_rate,"
                        "rate,cum_nominal,cum_effective") + 1
    plan_rows = []
    for line in lines[start:]:
        if line.startswith("aspp_rates"):
            break
        plan_rows.append(line.split(","))
    assert [int(r[6]) for r in plan_rows[-2:]] == [2, 4]
    assert [int(r[4]) for r in plan_rows[-2:]] == [1, 1]

    # identical config gives identical report bytes
    assert main(["analyze", "--config", cfg_path]) == 0
    again = capsys.readouterr().out
    assert again == out


def test_exit_codes(tmp_path):
    bad_cfg = str(tmp_path / "bad.cfg")
    with open(bad_cfg, "w") as f:
        f.write("train.unknown_knob = 1\n")
    assert main(["train", "--config", bad_cfg, "--out", str(tmp_path / "o")]) == 2

    cfg_path, cfg, _ = tiny_config(tmp_path)
    # missing dataset file -> data error
    missing = config_replace(cfg, train_manifest=str(tmp_path / "nope.txt"))
    p = str(tmp_path / "missing.cfg")
    with open(p, "w") as f:
        f.write(serialize_config(missing))
    assert main(["train", "--config", p, "--out", str(tmp_path / "o2")]) == 3

    # eval_os incompatible with the architecture -> config/plan error
    out = str(tmp_path / "out")
    assert main(["train", "--config", cfg_path, "--out", out]) == 0
    assert main(["eval", "--ckpt", os.path.join(out, "model.ckpt"),
                 "--out", str(tmp_path / "e"), "--eval-os", "12"]) == 2


def test_ablate_os_matrix_structure(tmp_path):
    cfg_path, cfg, _ = tiny_config(tmp_path, max_iter=2, checkpoint_every=0)
    out = str(tmp_path / "ablate")
    assert main(["ablate", "--config", cfg_path, "--axis", "os_matrix",
                 "--out", out]) == 0
    rows = open(os.path.join(out, "table_os_matrix.csv")).read().splitlines()
    assert rows[0] == "train_os,eval_os,decoder,ms,flip,miou,multiply_adds"
    assert len(rows) == 1 + 14
    keys = [tuple(r.split(",")[:5]) for r in rows[1:]]
    assert ("16", "16", "", "", "") in keys
    assert ("32", "8", "x", "", "") in keys
