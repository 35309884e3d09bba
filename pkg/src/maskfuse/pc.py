"""Peer copy-paste augmentation.

High-quality pseudo-masked objects ("tutors") are collected into a bounded
FIFO memory bank; augmentation pastes a randomly drawn tutor onto each
learner instance so that the pasted object overlaps the learner's GT box,
giving the learner a precise occlusion edge to train against.

The bank is an immutable snapshot: updates return a new bank, so selection
and augmentation can run concurrently against a frozen copy.  All RNG
streams are passed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .core import Box, GtInstance, mask_overlaps_box, tight_box
from .qam import FusedPseudoMask

FOOTPRINT_THRESHOLD = 0.5  # binarization level for pseudo-mask footprints
MAX_PLACEMENT_ATTEMPTS = 20


@dataclass(eq=False)
class Scene:
    """An image with its GT instances, and optional GT / pseudo masks per id."""

    image: np.ndarray  # HxWxC, C in {1, 3}, values in [0, 1]
    instances: list[GtInstance]
    pseudo: dict[str, FusedPseudoMask] = field(default_factory=dict)
    gt_masks: dict[str, np.ndarray] = field(default_factory=dict)
    id: str = "scene"

    def __post_init__(self) -> None:
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWxC with C in {{1, 3}}, got {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        self.image = img
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        hw = img.shape[:2]
        for key, mask in list(self.gt_masks.items()):
            if mask.shape != hw:
                raise ValueError(f"gt mask {key!r} shape {mask.shape} != image {hw}")
        for key, fused in self.pseudo.items():
            if fused.mask.shape != hw:
                raise ValueError(f"pseudo mask {key!r} shape {fused.mask.shape} != image {hw}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def channels(self) -> int:
        return self.image.shape[2]


@dataclass(frozen=True, eq=False)
class TutorEntry:
    """A bank entry: masked image patch, its binary mask, and provenance."""

    patch: np.ndarray  # ph x pw x C, image values under the mask, zero elsewhere
    mask: np.ndarray  # ph x pw, uint8
    score: float
    class_id: int
    source: tuple[str, str]  # (scene id, instance id)
    seq: int

    def __post_init__(self) -> None:
        if self.patch.shape[:2] != self.mask.shape:
            raise ValueError("patch and mask dimensions must match")
        if not self.mask.any():
            raise ValueError("tutor mask must have at least one set pixel")


@dataclass(frozen=True)
class MemoryBank:
    """Bounded FIFO of tutor entries; admission requires score > tau."""

    entries: tuple[TutorEntry, ...] = ()
    capacity: int = 80
    tau: float = 0.5
    next_seq: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if len(self.entries) > self.capacity:
            raise ValueError("bank over capacity")

    def __len__(self) -> int:
        return len(self.entries)


class BankUpdate(NamedTuple):
    bank: MemoryBank
    added: int
    skipped_low_quality: int
    skipped_overlap: int
    skipped_no_footprint: int


def _tutor_from_instance(scene: Scene, inst: GtInstance, fused: FusedPseudoMask, seq: int) -> TutorEntry:
    footprint = (fused.mask > FOOTPRINT_THRESHOLD).astype(np.uint8)
    box = tight_box(footprint)
    y0, y1 = int(box.y1), int(box.y2)
    x0, x1 = int(box.x1), int(box.x2)
    mask = footprint[y0:y1, x0:x1]
    patch = scene.image[y0:y1, x0:x1] * mask[:, :, None]
    return TutorEntry(
        patch=patch,
        mask=mask,
        score=fused.quality,
        class_id=inst.class_id,
        source=(scene.id, inst.id),
        seq=seq,
    )


def update_bank(bank: MemoryBank, scene: Scene) -> BankUpdate:
    """Admit eligible instances of a scene as tutors, FIFO-evicting on overflow.

    An instance is eligible when its pseudo-mask quality exceeds the bank's
    tau and its binarized footprint intersects no other instance's GT box.
    Ineligible instances are skipped and counted, never an error.
    """
    entries = list(bank.entries)
    seq = bank.next_seq
    added = low = overlap = empty = 0
    for inst in scene.instances:
        fused = scene.pseudo.get(inst.id)
        if fused is None or fused.quality <= bank.tau:
            low += 1
            continue
        footprint = (fused.mask > FOOTPRINT_THRESHOLD).astype(np.uint8)
        if not footprint.any():
            empty += 1
            continue
        others = (i for i in scene.instances if i.id != inst.id)
        if any(mask_overlaps_box(footprint, other.box) for other in others):
            overlap += 1
            continue
        entries.append(_tutor_from_instance(scene, inst, fused, seq))
        seq += 1
        added += 1
        if len(entries) > bank.capacity:
            entries.pop(0)
    new_bank = MemoryBank(
        entries=tuple(entries), capacity=bank.capacity, tau=bank.tau, next_seq=seq
    )
    return BankUpdate(new_bank, added, low, overlap, empty)


def select_tutor(bank: MemoryBank, rng: np.random.Generator) -> Optional[TutorEntry]:
    """Uniform draw over the bank; None when it is empty."""
    if len(bank) == 0:
        return None
    return bank.entries[int(rng.integers(len(bank)))]


class PasteResult(NamedTuple):
    scene: Scene
    pasted: bool


def _unique_instance_id(scene: Scene, stem: str) -> str:
    existing = {inst.id for inst in scene.instances}
    n = 0
    while f"{stem}{n}" in existing:
        n += 1
    return f"{stem}{n}"


def paste_overlapping(
    scene: Scene, learner: GtInstance, tutor: TutorEntry, rng: np.random.Generator
) -> PasteResult:
    """Paste the tutor so that its mask overlaps the learner's GT box.

    The patch center is drawn uniformly from the learner box dilated by half
    the patch size; a placement is accepted once at least one tutor-mask
    pixel (after clipping to the frame) lands inside the learner box, with
    at most 20 attempts before giving up (scene returned unchanged).

    On success the tutor occludes the scene: image pixels under the pasted
    mask take the patch values, the learner's pseudo mask is zeroed there,
    and a new instance is appended whose pseudo mask is the pasted
    footprint at the tutor's quality score.
    """
    h, w = scene.height, scene.width
    ph, pw = tutor.mask.shape
    lb = learner.box
    x_lo, x_hi = lb.x1 - pw / 2.0, lb.x2 + pw / 2.0
    y_lo, y_hi = lb.y1 - ph / 2.0, lb.y2 + ph / 2.0

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        cx = float(rng.uniform(x_lo, x_hi))
        cy = float(rng.uniform(y_lo, y_hi))
        ox = math.floor(cx - pw / 2.0 + 0.5)
        oy = math.floor(cy - ph / 2.0 + 0.5)
        # clip the patch placement to the frame
        fy0, fy1 = max(0, oy), min(h, oy + ph)
        fx0, fx1 = max(0, ox), min(w, ox + pw)
        if fy0 >= fy1 or fx0 >= fx1:
            continue
        footprint = np.zeros((h, w), dtype=np.uint8)
        footprint[fy0:fy1, fx0:fx1] = tutor.mask[fy0 - oy : fy1 - oy, fx0 - ox : fx1 - ox]
        if not footprint.any() or not mask_overlaps_box(footprint, lb):
            continue

        image = scene.image.copy()
        patch = tutor.patch[fy0 - oy : fy1 - oy, fx0 - ox : fx1 - ox]
        region = footprint[fy0:fy1, fx0:fx1].astype(bool)
        image[fy0:fy1, fx0:fx1][region] = patch[region]

        pseudo = dict(scene.pseudo)
        learner_fused = pseudo.get(learner.id)
        if learner_fused is not None:
            occluded = learner_fused.mask.copy()
            occluded[footprint.astype(bool)] = 0.0
            pseudo[learner.id] = replace(learner_fused, mask=occluded)

        new_id = _unique_instance_id(scene, "paste")
        pasted_inst = GtInstance(id=new_id, class_id=tutor.class_id, box=tight_box(footprint))
        pseudo[new_id] = FusedPseudoMask(
            mask=footprint.astype(np.float64),
            quality=tutor.score,
            weights=np.array([1.0]),
            k_used=1,
            valid_count=1,
        )
        gt_masks = dict(scene.gt_masks)
        gt_masks[new_id] = footprint

        augmented = Scene(
            image=image,
            instances=scene.instances + [pasted_inst],
            pseudo=pseudo,
            gt_masks=gt_masks,
            id=scene.id,
        )
        return PasteResult(augmented, True)
    return PasteResult(scene, False)


class AugmentResult(NamedTuple):
    scene: Scene
    pasted: int
    skipped: int


def augment(scene: Scene, bank: MemoryBank, rng: np.random.Generator) -> AugmentResult:
    """Paste one tutor per learner instance, in instance order.

    With an empty bank the scene passes through unchanged.  Newly pasted
    instances never act as learners within the same call.
    """
    learners = list(scene.instances)
    pasted = skipped = 0
    for learner in learners:
        tutor = select_tutor(bank, rng)
        if tutor is None:
            skipped += 1
            continue
        scene, ok = paste_overlapping(scene, learner, tutor, rng)
        if ok:
            pasted += 1
        else:
            skipped += 1
    return AugmentResult(scene, pasted, skipped)
