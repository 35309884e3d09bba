"""Quality-aware pseudo-mask machinery.

Given a set of detector proposals for one ground-truth box, this module
ranks them by box-IOU, fuses the top-K probability masks with normalized
sqrt(box_score * box_iou) weights, scores the fused mask's quality as the
geometric mean of the average box-score and the average gated pixel
probability inside the GT box, and exposes the quality-weighted dice loss.
A classic NMS-by-classification-score selector is included as a baseline.

All operations are pure; per-instance processing can run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import Box, GtInstance, as_prob_mask, box_to_mask, dice_loss, iou, nms


class NoValidCandidatesError(Exception):
    """Raised when no candidate passes the score threshold during fusion."""


@dataclass(frozen=True)
class QamConfig:
    """Thresholds and K-selection bounds for the fusion pipeline.

    ``fixed_k`` applies only when ``adaptive_k_enabled`` is False; it
    defaults to ``k_max``.
    """

    tau_m: float = 0.5
    k_min: int = 2
    k_max: int = 10
    area_small: float = 32.0**2
    area_large: float = 96.0**2
    adaptive_k_enabled: bool = True
    fixed_k: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau_m <= 1.0:
            raise ValueError(f"tau_m must be in [0, 1], got {self.tau_m}")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got ({self.k_min}, {self.k_max})")
        if not self.area_small < self.area_large:
            raise ValueError("area_small must be < area_large")


@dataclass(frozen=True, eq=False)
class Candidate:
    """One detector proposal: box, IOU-aware box-score, plain cls-score, mask."""

    box: Box
    box_score: float
    cls_score: float
    mask: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 <= self.box_score <= 1.0:
            raise ValueError(f"box_score must be in [0, 1], got {self.box_score}")
        if not 0.0 <= self.cls_score <= 1.0:
            raise ValueError(f"cls_score must be in [0, 1], got {self.cls_score}")
        object.__setattr__(self, "mask", as_prob_mask(self.mask))


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Candidates for one GT instance, with box-IOUs against the GT box cached.

    The IOUs are always computed from the GT box, which is exact by
    construction; candidate boxes and scores may be noisy.
    """

    gt: GtInstance
    candidates: tuple[Candidate, ...]
    box_ious: np.ndarray

    @classmethod
    def build(cls, gt: GtInstance, candidates: Sequence[Candidate]) -> "CandidateSet":
        cands = tuple(candidates)
        shapes = {c.mask.shape for c in cands}
        if len(shapes) > 1:
            raise ValueError(f"candidate masks disagree on dimensions: {sorted(shapes)}")
        ious = np.array([iou(c.box, gt.box) for c in cands], dtype=np.float64)
        return cls(gt=gt, candidates=cands, box_ious=ious)

    def __post_init__(self) -> None:
        if len(self.box_ious) != len(self.candidates):
            raise ValueError("box_ious and candidates must align")

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True, eq=False)
class FusedPseudoMask:
    """Fusion output: pseudo mask, quality score, and contributor weights.

    ``weights`` aligns with the top-K candidate order used for fusion;
    entries for candidates failing the score threshold are zero.
    ``k_used`` is the K after size adaptation, ``valid_count`` the number
    of candidates that passed the threshold.
    """

    mask: np.ndarray
    quality: float
    weights: np.ndarray
    k_used: int
    valid_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", as_prob_mask(self.mask))
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality must be in [0, 1], got {self.quality}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.size and w.min() < 0.0:
            raise ValueError("fusion weights must be nonnegative")
        if self.valid_count >= 1 and abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)


def adaptive_k(area: float, cfg: QamConfig) -> int:
    """Number of candidates to fuse for an object of the given box area.

    Small objects (area <= area_small) use k_min, large ones
    (area >= area_large) k_max; in between K interpolates linearly in
    sqrt(area) and is rounded half-up.  Monotone nondecreasing in area.
    """
    if area <= 0.0:
        raise ValueError(f"area must be positive, got {area}")
    if area <= cfg.area_small:
        return cfg.k_min
    if area >= cfg.area_large:
        return cfg.k_max
    lo, hi = math.sqrt(cfg.area_small), math.sqrt(cfg.area_large)
    k = cfg.k_min + (cfg.k_max - cfg.k_min) * (math.sqrt(area) - lo) / (hi - lo)
    return int(min(max(math.floor(k + 0.5), cfg.k_min), cfg.k_max))


def box_quality_ranking(cset: CandidateSet, k: int) -> CandidateSet:
    """Keep the top-k candidates by box-IOU against the GT box.

    Ties break by box_score descending, then original index ascending, so
    the best-IOU candidate is always retained and the order is
    deterministic under input permutation.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = sorted(
        range(len(cset)),
        key=lambda n: (-cset.box_ious[n], -cset.candidates[n].box_score, n),
    )[:k]
    return CandidateSet(
        gt=cset.gt,
        candidates=tuple(cset.candidates[n] for n in order),
        box_ious=cset.box_ious[order],
    )


def _fusion_weights(topk: CandidateSet, tau_m: float) -> tuple[np.ndarray, int]:
    scores = np.array([c.box_score for c in topk.candidates], dtype=np.float64)
    valid = scores > tau_m
    raw = np.where(valid, np.sqrt(scores * topk.box_ious), 0.0)
    total = raw.sum()
    if not valid.any() or total <= 0.0:
        raise NoValidCandidatesError(
            f"no candidate passed the score threshold {tau_m} with usable weight"
        )
    return raw / total, int(valid.sum())


def qmf_fuse(topk: CandidateSet, cfg: QamConfig) -> FusedPseudoMask:
    """Fuse the top-k candidate masks pixelwise with normalized quality weights.

    Each candidate with box_score > tau_m contributes weight proportional
    to sqrt(box_score * box_iou); the fused mask is the weighted sum, so
    every pixel stays within the contributing candidates' value envelope.
    The quality field is left at 0; ``mask_quality_score`` fills it.

    Raises NoValidCandidatesError when nothing passes the threshold.
    """
    if len(topk) == 0:
        raise NoValidCandidatesError("empty candidate set")
    weights, valid_count = _fusion_weights(topk, cfg.tau_m)
    stack = np.stack([c.mask for c in topk.candidates])
    # clip float residue of the convex combination back into [0, 1]
    fused = np.clip(np.tensordot(weights, stack, axes=1), 0.0, 1.0)
    return FusedPseudoMask(
        mask=fused,
        quality=0.0,
        weights=weights,
        k_used=len(topk),
        valid_count=valid_count,
    )


def _gated_mean_inside_box(mask: np.ndarray, gt_box: Box, tau_m: float) -> Optional[float]:
    """Mean of mask values > tau_m inside the GT box; None if the gate is empty."""
    h, w = mask.shape
    inside = box_to_mask(gt_box, h, w).mask.astype(bool)
    gate = (mask > tau_m) & inside
    if not gate.any():
        return None
    return float(mask[gate].mean())


def mask_quality_score(
    topk: CandidateSet, fused: np.ndarray, gt_box: Box, cfg: QamConfig
) -> float:
    """Quality of a fused mask: sqrt(mean box-score x mean gated pixel value).

    The score average runs over candidates passing tau_m; the pixel average
    runs over fused values > tau_m that lie inside the GT box.  Either set
    being empty means the mask is unusable and the quality is 0.
    """
    fused = as_prob_mask(fused)
    scores = [c.box_score for c in topk.candidates if c.box_score > cfg.tau_m]
    if not scores:
        return 0.0
    pixel_mean = _gated_mean_inside_box(fused, gt_box, cfg.tau_m)
    if pixel_mean is None:
        return 0.0
    return math.sqrt((sum(scores) / len(scores)) * pixel_mean)


def quality_weighted_loss(pairs: Sequence[tuple[np.ndarray, FusedPseudoMask]]) -> float:
    """Mean of quality * dice_loss(student, pseudo) over instance pairs.

    Linear in the quality vector; raises on an empty list (the mean over
    zero instances is undefined).
    """
    if len(pairs) == 0:
        raise ValueError("quality_weighted_loss needs at least one pair")
    total = 0.0
    for student, fused in pairs:
        total += fused.quality * dice_loss(student, fused.mask)
    return total / len(pairs)


def bpma_select(
    cset: CandidateSet, iou_threshold: float = 0.5, nms_threshold: float = 0.5
) -> Optional[Candidate]:
    """Baseline selector: NMS by cls-score, then accept the top survivor by IOU.

    Returns the highest-cls-score NMS survivor iff its box-IOU with the GT
    box exceeds ``iou_threshold``, else None.  Serves as the comparison
    point for ranking-based selection, which keys on box-IOU instead.
    """
    if len(cset) == 0:
        return None
    kept = nms([(c.box, c.cls_score) for c in cset.candidates], nms_threshold)
    best = max(kept, key=lambda n: (cset.candidates[n].cls_score, -n))
    if cset.box_ious[best] > iou_threshold:
        return cset.candidates[best]
    return None


def process_instance(cset: CandidateSet, cfg: QamConfig) -> Optional[FusedPseudoMask]:
    """End-to-end pipeline for one instance: rank, fuse, and score.

    K comes from the object size when adaptive selection is on, else from
    ``fixed_k``/``k_max``.  When no candidate passes the score threshold,
    falls back to the single argmax-sqrt(score*iou) candidate, scored on
    that mask alone.  An empty candidate set yields None.
    """
    if len(cset) == 0:
        return None
    if cfg.adaptive_k_enabled:
        k = adaptive_k(cset.gt.area, cfg)
    else:
        k = cfg.fixed_k if cfg.fixed_k is not None else cfg.k_max
    topk = box_quality_ranking(cset, k)
    try:
        fused = qmf_fuse(topk, cfg)
    except NoValidCandidatesError:
        return _fallback_single_candidate(topk, cfg)
    quality = mask_quality_score(topk, fused.mask, cset.gt.box, cfg)
    return replace(fused, quality=quality)


def _fallback_single_candidate(topk: CandidateSet, cfg: QamConfig) -> FusedPseudoMask:
    """Salvage the best single candidate when fusion has no valid inputs.

    Picks the argmax of sqrt(box_score * box_iou) among the ranked
    candidates and scores it alone, using its own (sub-threshold)
    box-score in place of the empty threshold-passing average.
    """
    quality_terms = [
        math.sqrt(c.box_score * u) for c, u in zip(topk.candidates, topk.box_ious)
    ]
    best = max(range(len(topk)), key=lambda n: (quality_terms[n], -n))
    chosen = topk.candidates[best]
    weights = np.zeros(len(topk), dtype=np.float64)
    weights[best] = 1.0
    pixel_mean = _gated_mean_inside_box(chosen.mask, topk.gt.box, cfg.tau_m)
    quality = 0.0 if pixel_mean is None else math.sqrt(chosen.box_score * pixel_mean)
    return FusedPseudoMask(
        mask=chosen.mask.copy(),
        quality=quality,
        weights=weights,
        k_used=len(topk),
        valid_count=0,
    )
