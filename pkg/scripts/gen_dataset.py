#!/usr/bin/env python3
"""Generate the synthetic shapes dataset and train/val split manifests.

Usage: python scripts/gen_dataset.py OUT_DIR [--n 200] [--side 64]
       [--classes 4] [--seed 7] [--val 50]
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from atrousseg.data import gen_shapes_dataset, write_manifest


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--val", type=int, default=50)
    args = ap.parse_args()
    m = gen_shapes_dataset(args.n, args.side, args.classes, args.seed, args.out_dir)
    train = m.pairs[:len(m.pairs) - args.val]
    val = m.pairs[len(m.pairs) - args.val:]
    write_manifest(os.path.join(args.out_dir, "train.txt"), train,
                   header=f"train split ({len(train)} samples)")
    write_manifest(os.path.join(args.out_dir, "val.txt"), val,
                   header=f"val split ({len(val)} samples)")
    print(f"wrote {len(m.pairs)} samples to {args.out_dir} "
          f"({len(train)} train / {len(val)} val)")


if __name__ == "__main__":
    main()
