"""Segmentation quality: confusion-matrix mIOU and trimap boundary bands.

Void pixels never enter any count. Trimap bands are built by thresholding
the Euclidean distance to the nearest void pixel, which makes band(w1) a
subset of band(w2) for w1 <= w2 by construction.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import ndimage

from .errors import MetricError, ShapeError

VOID_INDEX = 255


class ConfusionMatrix:
    """K x K counts; entry (g, p) = pixels with ground truth g predicted p."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, gt: np.ndarray, pred: np.ndarray, void_index: int = VOID_INDEX,
            where: np.ndarray | None = None) -> None:
        if gt.shape != pred.shape:
            raise ShapeError(f"gt/pred shape mismatch {gt.shape} vs {pred.shape}")
        valid = gt != void_index
        if where is not None:
            valid = valid & where
        g = gt[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        if g.size and (g.max() >= self.num_classes or p.max() >= self.num_classes):
            raise ShapeError("class index out of range for the confusion matrix")
        k = self.num_classes
        self.counts += np.bincount(k * g + p, minlength=k * k).reshape(k, k)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean IOU over classes with a nonzero union; per-class IOUs returned
    with NaN for undefined classes."""
    c = cm.counts
    inter = np.diag(c).astype(np.float64)
    union = c.sum(axis=0) + c.sum(axis=1) - np.diag(c)
    defined = union > 0
    if not defined.any():
        raise MetricError("mIOU undefined: no class has any ground truth or "
                          "predicted pixels")
    ious = np.full(cm.num_classes, np.nan)
    ious[defined] = inter[defined] / union[defined]
    return float(ious[defined].mean()), ious


def void_distance(gt: np.ndarray, void_index: int = VOID_INDEX) -> np.ndarray:
    """Euclidean distance from each pixel to the nearest void pixel
    (infinite when the map contains no void pixels)."""
    void = gt == void_index
    if not void.any():
        return np.full(gt.shape, np.inf)
    return ndimage.distance_transform_edt(~void)


def trimap_band(gt: np.ndarray, width: float, void_index: int = VOID_INDEX,
                distance: np.ndarray | None = None) -> np.ndarray:
    """Pixels within `width` of the void set (the dilated band)."""
    d = void_distance(gt, void_index) if distance is None else distance
    return d <= width


def trimap_miou(gt: np.ndarray, pred: np.ndarray, widths: list[int],
                num_classes: int, void_index: int = VOID_INDEX) -> dict[int, float]:
    """mIOU restricted to the trimap band at each width. Band pixels whose
    ground truth is void carry no label and are excluded. Widths whose band
    contains no scored pixel are skipped with a warning."""
    d = void_distance(gt, void_index)
    out: dict[int, float] = {}
    for w in widths:
        band = d <= w
        cm = ConfusionMatrix(num_classes)
        cm.add(gt, pred, void_index, where=band)
        if cm.counts.sum() == 0:
            warnings.warn(f"trimap width {w}: band contains no scored pixels; "
                          f"skipping")
            continue
        out[w] = miou(cm)[0]
    return out
