"""Box geometry, probability/binary mask arithmetic, dice loss, and NMS.

Everything in this module is a pure function of its inputs; there is no
shared mutable state, so all operations are safe to call concurrently.

Coordinate conventions: boxes live in continuous pixel coordinates and are
half-open, i.e. a box (x1, y1, x2, y2) covers [x1, x2) x [y1, y2).  A pixel
(x, y) belongs to a box iff its center (x + 0.5, y + 0.5) lies inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# Smoothing term of the dice loss; keeps the loss defined on all-zero masks.
DICE_SMOOTH = 1e-6


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in continuous pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: need x1 < x2 and y1 < y2, got {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class GtInstance:
    """A ground-truth object: identifier, class, GT box.

    ``area`` is derived from the box, so the invariant
    area == (x2 - x1) * (y2 - y1) holds by construction.
    """

    id: str
    class_id: int
    box: Box

    @property
    def area(self) -> float:
        return self.box.area


def as_prob_mask(values: np.ndarray) -> np.ndarray:
    """Validate and return a probability mask (2-D float64 array in [0, 1])."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"probability mask must be 2-D and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("probability mask values must lie in [0, 1]")
    return arr


def as_binary_mask(values: np.ndarray) -> np.ndarray:
    """Validate and return a binary mask (2-D uint8 array of {0, 1})."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"binary mask must be 2-D and non-empty, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = arr.astype(np.uint8)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("binary mask values must be exactly 0 or 1")
    return arr


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, 1 iff identical."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


class BoxRaster(NamedTuple):
    """Rasterized box plus a flag for boxes lying fully outside the frame."""

    mask: np.ndarray
    out_of_frame: bool


def box_to_mask(box: Box, h: int, w: int) -> BoxRaster:
    """Rasterize a box onto an h x w grid using the pixel-center rule.

    Pixel (x, y) is set iff its center (x + 0.5, y + 0.5) lies inside the
    half-open box, clipped to the frame.  A box with no geometric overlap
    with the frame yields an all-zero mask and ``out_of_frame=True``.
    """
    if h < 1 or w < 1:
        raise ValueError(f"frame dimensions must be >= 1, got ({h}, {w})")
    mask = np.zeros((h, w), dtype=np.uint8)
    out = box.x2 <= 0.0 or box.x1 >= w or box.y2 <= 0.0 or box.y1 >= h
    if not out:
        # center in [x1, x2)  <=>  x in [ceil(x1 - 0.5), ceil(x2 - 0.5) - 1]
        x_lo = max(0, math.ceil(box.x1 - 0.5))
        x_hi = min(w - 1, math.ceil(box.x2 - 0.5) - 1)
        y_lo = max(0, math.ceil(box.y1 - 0.5))
        y_hi = min(h - 1, math.ceil(box.y2 - 0.5) - 1)
        if x_lo <= x_hi and y_lo <= y_hi:
            mask[y_lo : y_hi + 1, x_lo : x_hi + 1] = 1
    return BoxRaster(mask=mask, out_of_frame=out)


def tight_box(mask: np.ndarray) -> Box:
    """Tight continuous bounding box of a mask's set pixels.

    The box covers the full pixel squares, i.e. pixel (x, y) contributes
    [x, x+1) x [y, y+1); rasterizing the result recovers the same pixels.
    """
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise ValueError("cannot take the bounding box of an empty mask")
    return Box(float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def dice_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Smoothed dice loss with squared-denominator form.

    1 - (2 * sum(p*q) + eps) / (sum(p^2) + sum(q^2) + eps), eps = 1e-6.
    Symmetric in its arguments and zero for identical masks.
    """
    p = as_prob_mask(pred)
    q = as_prob_mask(target)
    if p.shape != q.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {q.shape}")
    inter = float((p * q).sum())
    denom = float((p * p).sum() + (q * q).sum())
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)


def nms(candidates: Sequence[tuple[Box, float]], iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression; returns kept indices in processing order.

    Candidates are visited by descending score with ties broken by lower
    original index; a candidate is suppressed when its IOU with an already
    kept box exceeds the threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    for _, score in candidates:
        if not math.isfinite(score):
            raise ValueError("nms scores must be finite")
    order = sorted(range(len(candidates)), key=lambda n: (-candidates[n][1], n))
    kept: list[int] = []
    for n in order:
        box = candidates[n][0]
        if all(iou(box, candidates[k][0]) <= iou_threshold for k in kept):
            kept.append(n)
    return kept


def mask_overlaps_box(mask: np.ndarray, box: Box) -> bool:
    """True iff at least one set pixel of the mask lies inside the box."""
    m = as_binary_mask(mask)
    raster = box_to_mask(box, m.shape[0], m.shape[1]).mask
    return bool(np.logical_and(m, raster).any())


def rms_norm(values: np.ndarray) -> float:
    """Pixel-RMS norm: Frobenius norm divided by sqrt(pixel count)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rms_norm of an empty array is undefined")
    return float(np.sqrt(np.mean(arr * arr)))


def rms_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel-RMS distance between two equal-shape arrays."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return rms_norm(x - y)
