"""Manifest serialization: exact JSON scalars, float32 payload fixpoints."""

from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from maskfuse.core import Box, GtInstance
from maskfuse.manifest import load_manifest, save_manifest
from maskfuse.pc import Scene
from maskfuse.qam import QamConfig, process_instance
from maskfuse.synth import fragments_scene


def fused_fragments():
    scene, csets = fragments_scene()
    fused = process_instance(csets["obj0"], QamConfig())
    scene.pseudo["obj0"] = fused
    return scene, csets


def tree_bytes(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestRoundTrip:
    def test_scalars_round_trip_exactly(self, tmp_path):
        scene, csets = fused_fragments()
        save_manifest(tmp_path, scene, csets, provenance={"origin": {"seed": 3}})
        loaded = load_manifest(tmp_path)

        assert loaded.scene.id == scene.id
        assert loaded.provenance == {"origin": {"seed": 3}}
        assert [i.id for i in loaded.scene.instances] == ["obj0"]
        got = loaded.scene.instances[0]
        ref = scene.instances[0]
        assert got.class_id == ref.class_id
        assert (got.box.x1, got.box.y1, got.box.x2, got.box.y2) == (
            ref.box.x1,
            ref.box.y1,
            ref.box.x2,
            ref.box.y2,
        )
        for ca, cb in zip(loaded.candidates["obj0"].candidates, csets["obj0"].candidates):
            assert ca.box_score == cb.box_score
            assert ca.cls_score == cb.cls_score
            assert (ca.box.x1, ca.box.y1, ca.box.x2, ca.box.y2) == (
                cb.box.x1,
                cb.box.y1,
                cb.box.x2,
                cb.box.y2,
            )
        pa, pb = loaded.scene.pseudo["obj0"], scene.pseudo["obj0"]
        assert pa.quality == pb.quality
        assert_array_equal(pa.weights, pb.weights)
        assert (pa.k_used, pa.valid_count) == (pb.k_used, pb.valid_count)

    def test_pixels_quantize_to_float32_once(self, tmp_path):
        scene, csets = fused_fragments()
        save_manifest(tmp_path, scene, csets)
        loaded = load_manifest(tmp_path)
        assert_array_equal(
            loaded.scene.image, scene.image.astype(np.float32).astype(np.float64)
        )
        # a second save/load cycle is a fixpoint
        second = tmp_path / "again"
        save_manifest(second, loaded.scene, loaded.candidates, loaded.provenance)
        reloaded = load_manifest(second)
        assert_array_equal(reloaded.scene.image, loaded.scene.image)
        assert_array_equal(
            reloaded.scene.pseudo["obj0"].mask, loaded.scene.pseudo["obj0"].mask
        )
        assert_array_equal(
            reloaded.candidates["obj0"].candidates[0].mask,
            loaded.candidates["obj0"].candidates[0].mask,
        )

    def test_gt_masks_round_trip(self, tmp_path):
        scene, _ = fused_fragments()
        save_manifest(tmp_path, scene)
        loaded = load_manifest(tmp_path)
        assert_array_equal(loaded.scene.gt_masks["obj0"], scene.gt_masks["obj0"])

    def test_byte_deterministic_across_saves(self, tmp_path):
        scene, csets = fused_fragments()
        a, b = tmp_path / "a", tmp_path / "b"
        save_manifest(a, scene, csets, provenance={"seed": 1})
        save_manifest(b, scene, csets, provenance={"seed": 1})
        assert tree_bytes(a) == tree_bytes(b)

    def test_accepts_dir_or_file_path(self, tmp_path):
        scene, _ = fused_fragments()
        manifest_path = save_manifest(tmp_path, scene)
        assert manifest_path == tmp_path / "manifest.json"
        by_dir = load_manifest(tmp_path)
        by_file = load_manifest(manifest_path)
        assert by_dir.scene.id == by_file.scene.id


class TestLayout:
    def test_masks_live_under_masks_dir(self, tmp_path):
        scene, csets = fused_fragments()
        save_manifest(tmp_path, scene, csets)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["image"]["path"] == "image.f32"
        assert doc["instances"][0]["gt_mask_path"] == "masks/gt_obj0.f32"
        paths = [row["mask_path"] for row in doc["candidates"]["obj0"]]
        assert paths == [f"masks/cand_obj0_{n:03d}.f32" for n in range(3)]
        assert doc["pseudo"]["obj0"]["mask_path"] == "masks/pseudo_obj0.f32"
        for rel in paths + ["masks/gt_obj0.f32", "masks/pseudo_obj0.f32"]:
            assert (tmp_path / rel).is_file()

    def test_optional_sections_stay_empty(self, tmp_path):
        scene = Scene(
            image=np.zeros((4, 4, 1)),
            instances=[GtInstance(id="a", class_id=0, box=Box(0.0, 0.0, 2.0, 2.0))],
        )
        save_manifest(tmp_path, scene)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        assert doc["candidates"] == {} and doc["pseudo"] == {}
        assert "gt_mask_path" not in doc["instances"][0]
        loaded = load_manifest(tmp_path)
        assert loaded.candidates == {} and loaded.scene.pseudo == {}


class TestErrors:
    def test_unknown_candidate_id_on_save(self, tmp_path):
        scene, csets = fused_fragments()
        bad = {"ghost": csets["obj0"]}
        with pytest.raises(ValueError):
            save_manifest(tmp_path, scene, bad)

    def test_unsafe_instance_id_on_save(self, tmp_path):
        scene = Scene(
            image=np.zeros((4, 4, 1)),
            instances=[GtInstance(id="a/b", class_id=0, box=Box(0.0, 0.0, 2.0, 2.0))],
        )
        with pytest.raises(ValueError):
            save_manifest(tmp_path, scene)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path)

    def test_unknown_version(self, tmp_path):
        scene, _ = fused_fragments()
        path = save_manifest(tmp_path, scene)
        doc = json.loads(path.read_text())
        doc["version"] = 2
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_manifest(tmp_path)

    def test_unknown_dtype(self, tmp_path):
        scene, _ = fused_fragments()
        path = save_manifest(tmp_path, scene)
        doc = json.loads(path.read_text())
        doc["image"]["dtype"] = "float64"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_manifest(tmp_path)

    def test_truncated_payload(self, tmp_path):
        scene, _ = fused_fragments()
        save_manifest(tmp_path, scene)
        f32 = tmp_path / "image.f32"
        f32.write_bytes(f32.read_bytes()[:-4])
        with pytest.raises(ValueError):
            load_manifest(tmp_path)

    def test_candidates_for_unknown_instance_on_load(self, tmp_path):
        scene, csets = fused_fragments()
        path = save_manifest(tmp_path, scene, csets)
        doc = json.loads(path.read_text())
        doc["candidates"]["ghost"] = doc["candidates"].pop("obj0")
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_manifest(tmp_path)

    def test_malformed_box(self, tmp_path):
        scene, _ = fused_fragments()
        path = save_manifest(tmp_path, scene)
        doc = json.loads(path.read_text())
        doc["instances"][0]["box"] = [1.0, 2.0, 3.0]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_manifest(tmp_path)
