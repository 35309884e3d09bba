"""Scene manifests: a JSON index plus raw float32 mask payloads.

Schema (version 1), one directory per scene:

    manifest.json        UTF-8 JSON, keys sorted, schema below
    image.f32            little-endian float32, row-major, H*W*C values
    masks/*.f32          one file per GT / candidate / pseudo mask (H*W)

    {
      "version": 1,
      "scene_id": str,
      "image": {"path", "height", "width", "channels", "dtype"},
      "instances": [{"id", "class_id", "box": [x1, y1, x2, y2],
                     "gt_mask_path"?}],
      "candidates": {id: [{"box", "box_score", "cls_score", "mask_path"}]},
      "pseudo": {id: {"mask_path", "quality", "weights", "k_used",
                      "valid_count"}},
      "provenance": {...}
    }

Scalars (boxes, scores, weights, quality) live in the JSON and round-trip
exactly; pixel payloads are stored as float32, so they round-trip exactly
from the second write on (loaded values are float32-representable).
Serialization is byte-deterministic: sorted keys, fixed indentation, no
timestamps.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Box, GtInstance
from .pc import Scene
from .qam import Candidate, CandidateSet, FusedPseudoMask
from .raster import read_f32, write_f32

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

_ID_PATTERN = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass
class LoadedManifest:
    """A scene plus its candidate sets and provenance, as read from disk."""

    scene: Scene
    candidates: dict[str, CandidateSet] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def _check_id(inst_id: str) -> str:
    if not _ID_PATTERN.match(inst_id):
        raise ValueError(f"instance id {inst_id!r} is not filesystem-safe")
    return inst_id


def _box_to_json(box: Box) -> list[float]:
    return [box.x1, box.y1, box.x2, box.y2]


def _box_from_json(values: list[float]) -> Box:
    if len(values) != 4:
        raise ValueError(f"box must have 4 coordinates, got {values!r}")
    return Box(*map(float, values))


def save_manifest(
    out_dir: Path | str,
    scene: Scene,
    candidates: Optional[dict[str, CandidateSet]] = None,
    provenance: Optional[dict] = None,
) -> Path:
    """Write a scene (and optional candidates) as a manifest directory.

    Returns the path of the written manifest.json.  Masks land in masks/;
    all paths inside the JSON are relative to the manifest's directory.
    """
    out = Path(out_dir)
    masks = out / "masks"
    masks.mkdir(parents=True, exist_ok=True)
    candidates = candidates or {}
    unknown = set(candidates) - {inst.id for inst in scene.instances}
    if unknown:
        raise ValueError(f"candidates reference unknown instance ids: {sorted(unknown)}")

    write_f32(out / "image.f32", scene.image)
    doc: dict = {
        "version": MANIFEST_VERSION,
        "scene_id": scene.id,
        "image": {
            "path": "image.f32",
            "height": scene.height,
            "width": scene.width,
            "channels": scene.channels,
            "dtype": "float32",
        },
        "instances": [],
        "candidates": {},
        "pseudo": {},
        "provenance": provenance or {},
    }
    for inst in scene.instances:
        _check_id(inst.id)
        entry = {
            "id": inst.id,
            "class_id": inst.class_id,
            "box": _box_to_json(inst.box),
        }
        gt_mask = scene.gt_masks.get(inst.id)
        if gt_mask is not None:
            rel = f"masks/gt_{inst.id}.f32"
            write_f32(out / rel, gt_mask)
            entry["gt_mask_path"] = rel
        doc["instances"].append(entry)

        cset = candidates.get(inst.id)
        if cset is not None:
            rows = []
            for n, cand in enumerate(cset.candidates):
                rel = f"masks/cand_{inst.id}_{n:03d}.f32"
                write_f32(out / rel, cand.mask)
                rows.append(
                    {
                        "box": _box_to_json(cand.box),
                        "box_score": cand.box_score,
                        "cls_score": cand.cls_score,
                        "mask_path": rel,
                    }
                )
            doc["candidates"][inst.id] = rows

        fused = scene.pseudo.get(inst.id)
        if fused is not None:
            rel = f"masks/pseudo_{inst.id}.f32"
            write_f32(out / rel, fused.mask)
            doc["pseudo"][inst.id] = {
                "mask_path": rel,
                "quality": fused.quality,
                "weights": [float(w) for w in fused.weights],
                "k_used": fused.k_used,
                "valid_count": fused.valid_count,
            }

    path = out / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve_manifest_path(source: Path | str) -> Path:
    path = Path(source)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    return path


def load_manifest(source: Path | str) -> LoadedManifest:
    """Read a manifest directory (or manifest.json path) back into memory.

    Validates the schema version and that every referenced mask file exists
    with exactly the declared pixel count.
    """
    path = _resolve_manifest_path(source)
    base = path.parent
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unrecognized manifest version: {doc.get('version')!r}")

    img_info = doc["image"]
    if img_info.get("dtype") != "float32":
        raise ValueError(f"unsupported image dtype {img_info.get('dtype')!r}")
    h, w, c = int(img_info["height"]), int(img_info["width"]), int(img_info["channels"])
    image = read_f32(base / img_info["path"], (h, w, c))

    instances: list[GtInstance] = []
    gt_masks: dict[str, np.ndarray] = {}
    for entry in doc["instances"]:
        inst = GtInstance(
            id=_check_id(entry["id"]),
            class_id=int(entry["class_id"]),
            box=_box_from_json(entry["box"]),
        )
        instances.append(inst)
        rel = entry.get("gt_mask_path")
        if rel is not None:
            gt_masks[inst.id] = read_f32(base / rel, (h, w))

    pseudo: dict[str, FusedPseudoMask] = {}
    for inst_id, info in doc.get("pseudo", {}).items():
        pseudo[inst_id] = FusedPseudoMask(
            mask=read_f32(base / info["mask_path"], (h, w)),
            quality=float(info["quality"]),
            weights=np.asarray(info["weights"], dtype=np.float64),
            k_used=int(info["k_used"]),
            valid_count=int(info["valid_count"]),
        )

    scene = Scene(
        image=image,
        instances=instances,
        pseudo=pseudo,
        gt_masks=gt_masks,
        id=str(doc.get("scene_id", "scene")),
    )

    by_id = {inst.id: inst for inst in instances}
    candidates: dict[str, CandidateSet] = {}
    for inst_id, rows in doc.get("candidates", {}).items():
        if inst_id not in by_id:
            raise ValueError(f"candidates reference unknown instance {inst_id!r}")
        cands = tuple(
            Candidate(
                box=_box_from_json(row["box"]),
                box_score=float(row["box_score"]),
                cls_score=float(row["cls_score"]),
                mask=read_f32(base / row["mask_path"], (h, w)),
            )
            for row in rows
        )
        candidates[inst_id] = CandidateSet.build(by_id[inst_id], cands)

    return LoadedManifest(
        scene=scene, candidates=candidates, provenance=doc.get("provenance", {})
    )
