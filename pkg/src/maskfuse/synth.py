"""Synthetic scenes and candidate sets with known ground truth.

Scenes are rasterized with the same pixel-center convention as box
rasterization, so GT masks and tight GT boxes agree exactly with the
geometry they were sampled from.  Candidate generators corrupt the GT by
known, bounded noise so that fusion and scoring behaviour can be checked
against analytic expectations.

Everything is deterministic for a given spec: one `numpy` Generator is
seeded per call and consumed in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Box, GtInstance, box_to_mask, iou, tight_box
from .pc import Scene
from .qam import Candidate, CandidateSet

SHAPE_KINDS = ("ellipse", "rectangle", "capsule")
PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for a synthetic scene."""

    height: int = 64
    width: int = 64
    instance_count: int = 1
    shapes: tuple[str, ...] = SHAPE_KINDS
    size_range: tuple[float, float] = (6.0, 16.0)
    overlap: str = "disjoint"  # "disjoint" or "allow-overlap"
    channels: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("frame dimensions must be positive")
        if self.instance_count < 0:
            raise ValueError("instance_count must be >= 0")
        unknown = set(self.shapes) - set(SHAPE_KINDS)
        if not self.shapes or unknown:
            raise ValueError(f"shapes must be non-empty, drawn from {SHAPE_KINDS}")
        lo, hi = self.size_range
        if not (2.0 <= lo <= hi):
            raise ValueError("size_range must satisfy 2 <= lo <= hi")
        if hi > min(self.height, self.width):
            raise ValueError("size_range upper bound exceeds the frame")
        if self.overlap not in ("disjoint", "allow-overlap"):
            raise ValueError(f"unknown overlap policy {self.overlap!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


def _pixel_centers(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _ellipse_mask(h: int, w: int, cx: float, cy: float, a: float, b: float) -> np.ndarray:
    xg, yg = _pixel_centers(h, w)
    inside = ((xg - cx) / a) ** 2 + ((yg - cy) / b) ** 2 <= 1.0
    return inside.astype(np.uint8)


def _capsule_mask(
    h: int, w: int, cx: float, cy: float, length: float, r: float, vertical: bool
) -> np.ndarray:
    # distance from each pixel center to the capsule's axis segment
    xg, yg = _pixel_centers(h, w)
    half = max(length / 2.0 - r, 0.0)
    if vertical:
        du = np.clip(np.abs(yg - cy) - half, 0.0, None)
        dv = xg - cx
    else:
        du = np.clip(np.abs(xg - cx) - half, 0.0, None)
        dv = yg - cy
    inside = du**2 + dv**2 <= r**2
    return inside.astype(np.uint8)


def _sample_shape(
    spec: SceneSpec, rng: np.random.Generator
) -> tuple[np.ndarray, float, float]:
    """Draw one shape mask placed fully inside the frame.

    Returns (mask, half_width, half_height) of the shape's nominal extent.
    """
    kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
    lo, hi = spec.size_range
    h, w = spec.height, spec.width
    if kind == "rectangle":
        bw = float(rng.uniform(lo, hi))
        bh = float(rng.uniform(lo, hi))
        cx = float(rng.uniform(bw / 2.0, w - bw / 2.0))
        cy = float(rng.uniform(bh / 2.0, h - bh / 2.0))
        box = Box(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
        return box_to_mask(box, h, w).mask, bw / 2.0, bh / 2.0
    if kind == "ellipse":
        bw = float(rng.uniform(lo, hi))
        bh = float(rng.uniform(lo, hi))
        cx = float(rng.uniform(bw / 2.0, w - bw / 2.0))
        cy = float(rng.uniform(bh / 2.0, h - bh / 2.0))
        return _ellipse_mask(h, w, cx, cy, bw / 2.0, bh / 2.0), bw / 2.0, bh / 2.0
    # capsule: a segment swept by a disc, axis-aligned either way
    length = float(rng.uniform(lo, hi))
    r = min(float(rng.uniform(lo, hi)) / 2.0, length / 2.0)
    vertical = bool(rng.integers(2))
    ew, eh = (2.0 * r, length) if vertical else (length, 2.0 * r)
    cx = float(rng.uniform(ew / 2.0, w - ew / 2.0))
    cy = float(rng.uniform(eh / 2.0, h - eh / 2.0))
    return _capsule_mask(h, w, cx, cy, length, r, vertical), ew / 2.0, eh / 2.0


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample a scene of disjoint (or freely overlapping) painted shapes.

    GT boxes are the tight boxes of the rasterized masks.  Under the
    disjoint policy a placement is rejected while its box intersects any
    accepted instance's box; 100 consecutive rejections for one instance
    raise ValueError.
    """
    rng = np.random.default_rng(spec.seed)
    image = np.full((spec.height, spec.width, spec.channels), 0.1, dtype=np.float64)
    instances: list[GtInstance] = []
    gt_masks: dict[str, np.ndarray] = {}
    boxes: list[Box] = []
    for idx in range(spec.instance_count):
        for attempt in range(PLACEMENT_ATTEMPTS):
            mask, _, _ = _sample_shape(spec, rng)
            if not mask.any():
                continue
            box = tight_box(mask)
            if spec.overlap == "disjoint" and any(iou(box, b) > 0.0 for b in boxes):
                continue
            break
        else:
            raise ValueError(
                f"could not place instance {idx} after {PLACEMENT_ATTEMPTS} attempts"
            )
        inst = GtInstance(id=f"inst{idx}", class_id=int(rng.integers(4)), box=box)
        paint = rng.uniform(0.35, 0.95, size=spec.channels)
        image[mask.astype(bool)] = paint
        instances.append(inst)
        gt_masks[inst.id] = mask
        boxes.append(box)
    return Scene(
        image=image,
        instances=instances,
        gt_masks=gt_masks,
        id=f"synthetic-{spec.seed}",
    )


@dataclass(frozen=True)
class CandidateSpec:
    """Noise model for candidate masks, boxes, and scores.

    Mask noise is uniform on [-sqrt(3)*sigma_mask, +sqrt(3)*sigma_mask]
    (variance sigma_mask^2 before clamping); box corners move by at most
    box_jitter times the box side; box scores get bounded relative noise.
    """

    count: int = 10
    sigma_mask: float = 0.1
    box_jitter: float = 0.1
    score_noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.sigma_mask < 0.0 or self.score_noise < 0.0:
            raise ValueError("noise scales must be >= 0")
        if not 0.0 <= self.box_jitter < 0.5:
            raise ValueError("box_jitter must lie in [0, 0.5)")


def _jitter_box(box: Box, jitter: float, rng: np.random.Generator) -> Box:
    d = rng.uniform(-jitter, jitter, size=4)
    bw, bh = box.width, box.height
    return Box(
        box.x1 + d[0] * bw,
        box.y1 + d[1] * bh,
        box.x2 + d[2] * bw,
        box.y2 + d[3] * bh,
    )


def generate_candidates(scene: Scene, spec: CandidateSpec) -> dict[str, CandidateSet]:
    """Derive a noisy candidate set from each instance's exact GT mask.

    The localization quality of each candidate is recomputed exactly from
    its jittered box, and the box score is that quality with bounded
    relative noise, so score/quality relationships mirror the noise model.
    Class scores are independent uniforms.
    """
    rng = np.random.default_rng(spec.seed)
    half_width = np.sqrt(3.0) * spec.sigma_mask
    out: dict[str, CandidateSet] = {}
    for inst in scene.instances:
        gt_mask = scene.gt_masks.get(inst.id)
        if gt_mask is None:
            raise ValueError(f"instance {inst.id!r} has no GT mask to corrupt")
        base = gt_mask.astype(np.float64)
        cands = []
        for _ in range(spec.count):
            noise = rng.uniform(-half_width, half_width, size=base.shape)
            mask = np.clip(base + noise, 0.0, 1.0)
            cand_box = _jitter_box(inst.box, spec.box_jitter, rng)
            u = iou(cand_box, inst.box)
            s = float(np.clip(u * (1.0 + rng.uniform(-spec.score_noise, spec.score_noise)), 0.0, 1.0))
            cls = float(rng.uniform())
            cands.append(Candidate(box=cand_box, box_score=s, cls_score=cls, mask=mask))
        out[inst.id] = CandidateSet.build(inst, tuple(cands))
    return out


def fragments_scenario() -> CandidateSet:
    """A hand-built case where box quality disagrees with class confidence.

    One 48x8 bar is observed through three candidates: two confident
    fragments covering under half the object each, and one low-confidence
    candidate whose mask covers the whole bar.  Class-score selection keeps
    a fragment; ranking by localization quality keeps the full candidate.
    """
    h = w = 64
    gt_box = Box(8.0, 28.0, 56.0, 36.0)
    gt = GtInstance(id="obj0", class_id=0, box=gt_box)
    gt_mask = box_to_mask(gt_box, h, w).mask.astype(np.float64)

    def clipped(box: Box) -> np.ndarray:
        return box_to_mask(box, h, w).mask.astype(np.float64)

    left = Box(8.0, 28.0, 29.6, 36.0)  # IOU vs GT: 0.45
    right = Box(36.8, 28.0, 56.0, 36.0)  # IOU vs GT: 0.40
    full = Box(8.0, 28.0, 48.8, 36.0)  # IOU vs GT: 0.85
    cands = (
        Candidate(box=left, box_score=0.55, cls_score=0.90, mask=clipped(left)),
        Candidate(box=right, box_score=0.52, cls_score=0.85, mask=clipped(right)),
        Candidate(box=full, box_score=0.90, cls_score=0.30, mask=gt_mask),
    )
    return CandidateSet.build(gt, cands)


def fragments_scene() -> tuple[Scene, dict[str, CandidateSet]]:
    """The fragments scenario packaged as a scene plus its candidate sets."""
    cset = fragments_scenario()
    gt = cset.gt
    h = w = 64
    gt_mask = box_to_mask(gt.box, h, w).mask
    image = np.full((h, w, 1), 0.1, dtype=np.float64)
    image[gt_mask.astype(bool)] = 0.8
    scene = Scene(
        image=image,
        instances=[gt],
        gt_masks={gt.id: gt_mask},
        id="fragments",
    )
    return scene, {gt.id: cset}
