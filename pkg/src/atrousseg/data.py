"""Synthetic shapes dataset, sample I/O, and training augmentations.

The generator draws randomly placed, randomly colored rectangles, disks
and triangles on a textured background; the label map assigns one class
per shape kind (background is class 0) and a one-pixel void ring along
every label boundary, so boundary-band evaluation has something to bite
on. Everything is deterministic given the seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .tensor import bilinear_resize

VOID_INDEX = 255


@dataclass
class Sample:
    image: np.ndarray   # (1,3,h,w) float64 in [0,1]
    label: np.ndarray   # (h,w) uint8, VOID_INDEX for void

    def __post_init__(self):
        if self.image.shape[2:] != self.label.shape:
            raise ShapeError(f"image {self.image.shape} and label "
                             f"{self.label.shape} disagree")


@dataclass
class DatasetManifest:
    root: str
    pairs: list[tuple[str, str]]
    num_classes: int
    void_index: int = VOID_INDEX

    def __len__(self):
        return len(self.pairs)


def _fill_rect(mask, cy, cx, hh, hw):
    h, w = mask.shape
    mask[max(cy - hh, 0):min(cy + hh + 1, h), max(cx - hw, 0):min(cx + hw + 1, w)] = True


def _fill_disk(mask, cy, cx, r):
    h, w = mask.shape
    yy, xx = np.ogrid[:h, :w]
    mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = True


def _fill_triangle(mask, pts):
    h, w = mask.shape
    yy, xx = np.mgrid[:h, :w]
    inside = np.ones((h, w), dtype=bool)
    for i in range(3):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % 3]
        # half-plane test against each (consistently wound) edge
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    mask[inside] = True


def _boundary_ring(label: np.ndarray) -> np.ndarray:
    """Pixels adjacent (4-neighborhood) to a pixel of a different class."""
    ring = np.zeros(label.shape, dtype=bool)
    diff_v = label[1:, :] != label[:-1, :]
    ring[1:, :] |= diff_v
    ring[:-1, :] |= diff_v
    diff_h = label[:, 1:] != label[:, :-1]
    ring[:, 1:] |= diff_h
    ring[:, :-1] |= diff_h
    return ring


def make_shapes_sample(side: int, num_classes: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One image/label pair. Shape kinds cycle rect/disk/triangle over the
    foreground classes; each class appears with probability 0.9."""
    base = rng.uniform(0.15, 0.45)
    img = np.empty((side, side, 3))
    grad = np.linspace(-0.08, 0.08, side)
    for ch in range(3):
        img[:, :, ch] = (base + rng.uniform(-0.05, 0.05)
                         + grad[None, :] * rng.uniform(-1, 1)
                         + grad[:, None] * rng.uniform(-1, 1))
    img += rng.uniform(-0.04, 0.04, size=img.shape)
    label = np.zeros((side, side), dtype=np.uint8)

    classes = list(range(1, num_classes))
    present = [c for c in classes if rng.random() < 0.9]
    if not present:
        present = [classes[int(rng.integers(len(classes)))]]
    for cls in present:
        kind = (cls - 1) % 3
        size = int(rng.integers(side // 10, side // 5 + 1))
        cy = int(rng.integers(size + 1, side - size - 1))
        cx = int(rng.integers(size + 1, side - size - 1))
        mask = np.zeros((side, side), dtype=bool)
        if kind == 0:
            _fill_rect(mask, cy, cx, size, max(3, int(size * rng.uniform(0.6, 1.4))))
        elif kind == 1:
            _fill_disk(mask, cy, cx, size)
        else:
            ang = rng.uniform(0, 2 * np.pi)
            pts = []
            for k in range(3):
                a = ang + 2 * np.pi * k / 3
                pts.append((cy + size * np.sin(a), cx + size * np.cos(a)))
            # wind consistently counter-clockwise for the half-plane test
            _fill_triangle(mask, pts)
        color = rng.uniform(0.55, 1.0, size=3) * np.where(rng.random(3) < 0.5, 1.0, 0.55)
        img[mask] = color + rng.uniform(-0.03, 0.03, size=(int(mask.sum()), 3))
        label[mask] = cls

    img = np.clip(img, 0.0, 1.0)
    label[_boundary_ring(label)] = VOID_INDEX
    return img, label


def gen_shapes_dataset(n: int, side: int, num_classes: int, seed: int,
                       root: str) -> DatasetManifest:
    """Generate n PPM/PGM pairs under root and write a manifest file."""
    if num_classes < 2:
        raise DataError("num_classes must be >= 2 (background plus shapes)")
    if side < 32:
        raise DataError("side must be >= 32")
    os.makedirs(root, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    pairs = []
    for i in range(n):
        img, label = make_shapes_sample(side, num_classes, rng)
        img_name = f"img_{i:04d}.ppm"
        lbl_name = f"lbl_{i:04d}.pgm"
        write_ppm(os.path.join(root, img_name),
                  np.round(img * 255.0).astype(np.uint8))
        write_pgm(os.path.join(root, lbl_name), label)
        pairs.append((img_name, lbl_name))
    manifest_path = os.path.join(root, "manifest.txt")
    write_manifest(manifest_path, pairs, header=f"shapes dataset n={n} side={side} "
                                                f"classes={num_classes} seed={seed}")
    return DatasetManifest(root=root, pairs=pairs, num_classes=num_classes)


def write_manifest(path: str, pairs: list[tuple[str, str]], header: str = "") -> None:
    with open(path, "w") as f:
        if header:
            f.write(f"# {header}\n")
        for img, lbl in pairs:
            f.write(f"{img}\t{lbl}\n")


def load_manifest(path: str, num_classes: int,
                  void_index: int = VOID_INDEX) -> DatasetManifest:
    """Parse an image<TAB>label manifest; every listed file must exist."""
    if not os.path.isfile(path):
        raise DataError(f"manifest not found: {path}")
    root = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected image<TAB>label")
            pairs.append((parts[0], parts[1]))
    for img, lbl in pairs:
        for rel in (img, lbl):
            if not os.path.isfile(os.path.join(root, rel)):
                raise DataError(f"manifest entry missing on disk: {rel}")
    return DatasetManifest(root=root, pairs=pairs, num_classes=num_classes,
                           void_index=void_index)


def load_sample(manifest: DatasetManifest, index: int) -> Sample:
    img_rel, lbl_rel = manifest.pairs[index]
    rgb = read_ppm(os.path.join(manifest.root, img_rel))
    label = read_pgm(os.path.join(manifest.root, lbl_rel))
    image = (rgb.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]
    return Sample(image=np.ascontiguousarray(image), label=label)


def nearest_resize_label(label: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize on the align-corners grid; class indices stay
    categorical."""
    h, w = label.shape
    if (out_h, out_w) == (h, w):
        return label.copy()
    ri = _nearest_indices(h, out_h)
    ci = _nearest_indices(w, out_w)
    return label[np.ix_(ri, ci)]


def _nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    if out_size == 1:
        return np.zeros(1, dtype=np.intp)
    src = np.arange(out_size) * ((in_size - 1) / (out_size - 1))
    return np.clip(np.floor(src + 0.5).astype(np.intp), 0, in_size - 1)


def augment(s: Sample, crop: int, scale_range: tuple[float, float],
            hflip_prob: float, rng: np.random.Generator) -> Sample:
    """Random scale (bilinear image / nearest label), pad if short (mean
    image value / void label), random crop, random horizontal flip."""
    lo, hi = scale_range
    if not (0.25 <= lo <= hi <= 4.0):
        raise DataError(f"scale range must lie within [0.25, 4], got {scale_range}")
    h, w = s.label.shape
    scale = rng.uniform(lo, hi)
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    if (nh, nw) != (h, w):
        image = bilinear_resize(s.image, nh, nw)
        label = nearest_resize_label(s.label, nh, nw)
    else:
        image = s.image.copy()
        label = s.label.copy()

    pad_h = max(crop - nh, 0)
    pad_w = max(crop - nw, 0)
    if pad_h or pad_w:
        fill = image.mean(axis=(0, 2, 3))
        padded = np.empty((1, 3, nh + pad_h, nw + pad_w))
        padded[...] = fill[None, :, None, None]
        padded[:, :, :nh, :nw] = image
        image = padded
        lpad = np.full((nh + pad_h, nw + pad_w), VOID_INDEX, dtype=np.uint8)
        lpad[:nh, :nw] = label
        label = lpad
        nh, nw = nh + pad_h, nw + pad_w

    top = int(rng.integers(0, nh - crop + 1))
    left = int(rng.integers(0, nw - crop + 1))
    image = image[:, :, top:top + crop, left:left + crop]
    label = label[top:top + crop, left:left + crop]

    if rng.random() < hflip_prob:
        image = image[:, :, :, ::-1]
        label = label[:, ::-1]
    return Sample(image=np.ascontiguousarray(image),
                  label=np.ascontiguousarray(label))
