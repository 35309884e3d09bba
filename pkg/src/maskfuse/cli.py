"""Command-line front end.

Subcommands cover the full pipeline: scene synthesis, mask fusion, quality
scoring, the weighted loss, copy-paste augmentation, Monte Carlo
verification of the error bounds, the baseline comparison table, and
PGM/PPM rendering.  Manifest I/O lives in ``manifest``; every command that
takes a seed is bit-deterministic end to end.

Exit codes: 0 success (or all checks passed), 1 verification failure,
2 usage or I/O error.  ``MASKFUSE_OUT`` provides the default output
directory when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import rms_distance
from .manifest import LoadedManifest, load_manifest, save_manifest
from .pc import MemoryBank, TutorEntry, augment, update_bank
from .qam import (
    QamConfig,
    bpma_select,
    box_quality_ranking,
    mask_quality_score,
    process_instance,
    quality_weighted_loss,
)
from .raster import read_f32, to_uint8, write_f32, write_pgm, write_ppm
from .synth import SHAPE_KINDS, CandidateSpec, SceneSpec, fragments_scene, generate_candidates, generate_scene
from .theory import NoiseStats, mc_verify_mqs, mc_verify_qmf, mqs_convergence_sweep, qmf_k_sweep

OUT_ENV = "MASKFUSE_OUT"

BANK_NAME = "bank.json"


def _add_out_flag(parser: argparse.ArgumentParser, help_text: str = "output directory") -> None:
    parser.add_argument(
        "--out",
        type=Path,
        default=os.environ.get(OUT_ENV),
        help=f"{help_text} (default: ${OUT_ENV})",
    )


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise ValueError(f"--out is required (or set ${OUT_ENV})")
    return Path(args.out)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("fusion configuration")
    group.add_argument("--tau-m", type=float, default=0.5, help="score threshold (default 0.5)")
    group.add_argument("--k-min", type=int, default=2, help="min fusion count (default 2)")
    group.add_argument("--k-max", type=int, default=10, help="max fusion count (default 10)")
    group.add_argument("--area-small", type=float, default=32.0**2, help="small-object area (default 1024)")
    group.add_argument("--area-large", type=float, default=96.0**2, help="large-object area (default 9216)")
    group.add_argument("--no-adaptive-k", action="store_true", help="disable size-adaptive K")
    group.add_argument("--k", type=int, default=None, help="fixed K (needs --no-adaptive-k)")


def _config_from_args(args: argparse.Namespace) -> QamConfig:
    if args.k is not None and not args.no_adaptive_k:
        raise ValueError("--k requires --no-adaptive-k")
    return QamConfig(
        tau_m=args.tau_m,
        k_min=args.k_min,
        k_max=args.k_max,
        area_small=args.area_small,
        area_large=args.area_large,
        adaptive_k_enabled=not args.no_adaptive_k,
        fixed_k=args.k,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    out = _require_out(args)
    if args.preset == "fragments":
        scene, candidates = fragments_scene()
        provenance = {"preset": "fragments", "seed": args.seed}
    else:
        spec = SceneSpec(
            height=args.height,
            width=args.width,
            instance_count=args.instances,
            shapes=tuple(args.shapes.split(",")),
            size_range=(args.size_min, args.size_max),
            overlap=args.policy,
            channels=args.channels,
            seed=args.seed,
        )
        cspec = CandidateSpec(
            count=args.candidates,
            sigma_mask=args.sigma_mask,
            box_jitter=args.box_jitter,
            score_noise=args.score_noise,
            seed=args.seed + 1,
        )
        scene = generate_scene(spec)
        candidates = generate_candidates(scene, cspec)
        provenance = {"seed": args.seed, "scene": asdict(spec), "candidates": asdict(cspec)}
    path = save_manifest(out, scene, candidates, provenance)
    print(f"wrote {path}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    out = _require_out(args)
    cfg = _config_from_args(args)
    loaded = load_manifest(args.manifest)
    scene = loaded.scene
    for inst in scene.instances:
        cset = loaded.candidates.get(inst.id)
        if cset is None:
            continue
        fused = process_instance(cset, cfg)
        if fused is None:
            continue
        scene.pseudo[inst.id] = fused
        weights = ", ".join(repr(float(w)) for w in fused.weights)
        print(f"{inst.id}: quality={fused.quality!r} k={fused.k_used} weights=[{weights}]")
    provenance = dict(loaded.provenance)
    provenance["fuse_config"] = asdict(cfg)
    path = save_manifest(out, scene, loaded.candidates, provenance)
    print(f"wrote {path}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    loaded = load_manifest(args.manifest)
    scene = loaded.scene
    scores: dict[str, float] = {}
    for inst in scene.instances:
        fused = scene.pseudo.get(inst.id)
        cset = loaded.candidates.get(inst.id)
        if fused is None or cset is None:
            continue
        topk = box_quality_ranking(cset, fused.k_used)
        quality = mask_quality_score(topk, fused.mask, inst.box, cfg)
        scores[inst.id] = quality
        print(f"{inst.id}: quality={quality!r}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.json").write_text(
            json.dumps(scores, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_loss(args: argparse.Namespace) -> int:
    pred = load_manifest(args.pred)
    target = load_manifest(args.target)
    ids = sorted(set(pred.scene.pseudo) & set(target.scene.pseudo))
    if not ids:
        raise ValueError("no instance id has a pseudo mask in both manifests")
    pairs = [(pred.scene.pseudo[i].mask, target.scene.pseudo[i]) for i in ids]
    loss = quality_weighted_loss(pairs)
    print(f"loss={loss!r}")
    return 0


def _bank_dir_paths(bank_dir: Path) -> Path:
    return bank_dir / BANK_NAME


def save_bank(bank_dir: Path, bank: MemoryBank) -> Path:
    """Persist a memory bank: JSON index plus float32 patch/mask files."""
    bank_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in bank.entries:
        patch_rel = f"patch_{e.seq:06d}.f32"
        mask_rel = f"mask_{e.seq:06d}.f32"
        write_f32(bank_dir / patch_rel, e.patch)
        write_f32(bank_dir / mask_rel, e.mask)
        entries.append(
            {
                "height": e.mask.shape[0],
                "width": e.mask.shape[1],
                "channels": e.patch.shape[2],
                "patch_path": patch_rel,
                "mask_path": mask_rel,
                "score": e.score,
                "class_id": e.class_id,
                "source": list(e.source),
                "seq": e.seq,
            }
        )
    doc = {
        "version": 1,
        "capacity": bank.capacity,
        "tau": bank.tau,
        "next_seq": bank.next_seq,
        "entries": entries,
    }
    path = _bank_dir_paths(bank_dir)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_bank(bank_dir: Path, capacity: int, tau: float) -> MemoryBank:
    """Load a persisted bank, or create an empty one when none exists."""
    path = _bank_dir_paths(bank_dir)
    if not path.is_file():
        return MemoryBank(capacity=capacity, tau=tau)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise ValueError(f"unrecognized bank version: {doc.get('version')!r}")
    entries = []
    for row in doc["entries"]:
        ph, pw, c = int(row["height"]), int(row["width"]), int(row["channels"])
        patch = read_f32(bank_dir / row["patch_path"], (ph, pw, c))
        mask = read_f32(bank_dir / row["mask_path"], (ph, pw)).astype(np.uint8)
        entries.append(
            TutorEntry(
                patch=patch,
                mask=mask,
                score=float(row["score"]),
                class_id=int(row["class_id"]),
                source=(row["source"][0], row["source"][1]),
                seq=int(row["seq"]),
            )
        )
    return MemoryBank(
        entries=tuple(entries),
        capacity=int(doc["capacity"]),
        tau=float(doc["tau"]),
        next_seq=int(doc["next_seq"]),
    )


def cmd_augment(args: argparse.Namespace) -> int:
    out = _require_out(args)
    loaded = load_manifest(args.manifest)
    bank = load_bank(args.bank_dir, capacity=args.capacity, tau=args.tau)
    if not args.no_update_bank:
        update = update_bank(bank, loaded.scene)
        bank = update.bank
        print(
            f"bank: size={len(bank)} added={update.added} "
            f"low_quality={update.skipped_low_quality} overlap={update.skipped_overlap}"
        )
    rng = np.random.default_rng(args.seed)
    result = augment(loaded.scene, bank, rng)
    save_bank(args.bank_dir, bank)
    path = save_manifest(
        out,
        result.scene,
        loaded.candidates,
        {**loaded.provenance, "augment_seed": args.seed},
    )
    print(f"augment: pasted={result.pasted} skipped={result.skipped}")
    print(f"wrote {path}")
    return 0


def compare_rows(loaded: LoadedManifest, cfg: QamConfig) -> list[dict]:
    """Per-instance comparison of the baseline selector and ranked fusion."""
    rows: list[dict] = []
    scene = loaded.scene
    for inst in scene.instances:
        cset = loaded.candidates.get(inst.id)
        if cset is None or len(cset) == 0:
            continue
        picked = bpma_select(cset)
        bpma_idx = next(
            (n for n, c in enumerate(cset.candidates) if c is picked), None
        )
        top1 = box_quality_ranking(cset, 1).candidates[0]
        bqr_idx = next(n for n, c in enumerate(cset.candidates) if c is top1)
        fused = process_instance(cset, cfg)
        gt_mask = scene.gt_masks.get(inst.id)
        truth = None if gt_mask is None else np.asarray(gt_mask, dtype=np.float64)
        row = {
            "instance": inst.id,
            "bpma_index": bpma_idx,
            "bpma_u": None if bpma_idx is None else float(cset.box_ious[bpma_idx]),
            "bqr_index": bqr_idx,
            "bqr_u": float(cset.box_ious[bqr_idx]),
            "bpma_rms": None
            if (picked is None or truth is None)
            else rms_distance(picked.mask, truth),
            "fused_rms": None
            if (fused is None or truth is None)
            else rms_distance(fused.mask, truth),
        }
        rows.append(row)
    return rows


def _fmt_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def cmd_compare_bpma(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    loaded = load_manifest(args.manifest)
    rows = compare_rows(loaded, cfg)
    columns = ["instance", "bpma_index", "bpma_u", "bqr_index", "bqr_u", "bpma_rms", "fused_rms"]
    widths = {
        col: max(len(col), *(len(_fmt_cell(r[col])) for r in rows)) if rows else len(col)
        for col in columns
    }
    print("  ".join(col.ljust(widths[col]) for col in columns))
    for row in rows:
        print("  ".join(_fmt_cell(row[col]).ljust(widths[col]) for col in columns))
    if args.csv is not None:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return 0


def _gray_to_rgb(image: np.ndarray) -> np.ndarray:
    img8 = to_uint8(image)
    if img8.shape[2] == 3:
        return img8
    return np.repeat(img8, 3, axis=2)


def cmd_render(args: argparse.Namespace) -> int:
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    loaded = load_manifest(args.manifest)
    scene = loaded.scene
    if scene.channels == 1:
        write_pgm(out / "image.pgm", to_uint8(scene.image)[:, :, 0])
    else:
        write_ppm(out / "image.ppm", to_uint8(scene.image))
    rgb = _gray_to_rgb(scene.image)
    for inst in scene.instances:
        fused = scene.pseudo.get(inst.id)
        mask = fused.mask if fused is not None else scene.gt_masks.get(inst.id)
        if mask is None:
            continue
        mask = np.asarray(mask, dtype=np.float64)
        write_pgm(out / f"mask_{inst.id}.pgm", to_uint8(mask))
        overlay = rgb.copy()
        overlay[mask > 0.5] = (255, 0, 0)
        write_ppm(out / f"overlay_{inst.id}.ppm", overlay)
    print(f"wrote renders to {out}")
    return 0


QMF_SIGMA = 0.2
QMF_SWEEP_KS = (2, 4, 8)
QMF_RATIO_K = 10
QMF_RATIO_GATE = 0.6
MQS_SIZES = (16, 64, 256, 1024)
MQS_EPS_GRID = (0.05, 0.1, 0.2)
MQS_SLOPE_WINDOW = (-0.65, -0.35)

QUICK_QMF_SWEEP_KS = (2, 4)
QUICK_MQS_SIZES = (16, 64, 256)
QUICK_MQS_EPS_GRID = (0.1, 0.2)


def run_verification(
    out_dir: Path,
    seed: int,
    quick: bool = False,
    trials_qmf: Optional[int] = None,
    trials_mqs: Optional[int] = None,
) -> bool:
    """Run the bound-vs-empirical grid, write CSV + summary, return all-pass.

    The quick grid is a strict subset of the full grid (fewer sizes and
    trials); both are seed-deterministic.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    n_qmf = trials_qmf if trials_qmf is not None else (1000 if quick else 2000)
    n_mqs = trials_mqs if trials_mqs is not None else (2000 if quick else 5000)
    sweep_ks = QUICK_QMF_SWEEP_KS if quick else QMF_SWEEP_KS
    sizes = QUICK_MQS_SIZES if quick else MQS_SIZES
    eps_grid = QUICK_MQS_EPS_GRID if quick else MQS_EPS_GRID

    qmf_noise = NoiseStats(sigma_s2=0.0, sigma_m2=QMF_SIGMA**2)
    mqs_noise = NoiseStats(sigma_s2=0.25, sigma_m2=0.25)
    rows: list[dict] = []
    checks: dict[str, bool] = {}

    sweep = qmf_k_sweep(qmf_noise, sweep_ks, n_qmf, seed)
    for k, fused, cand in zip(sweep.ks, sweep.fused_mses, sweep.candidate_mses):
        rows.append(
            {
                "check": "qmf",
                "params": f"k={k};sigma_m={QMF_SIGMA}",
                "empirical": fused,
                "bound": cand,
                "bound_paper": "",
                "pass": fused < cand,
            }
        )
    ratios = [b / a for a, b in zip(sweep.fused_mses, sweep.fused_mses[1:])]
    rows.append(
        {
            "check": "qmf_monotone",
            "params": "ks=" + ",".join(str(k) for k in sweep.ks),
            "empirical": max(ratios),
            "bound": 1.10,
            "bound_paper": "",
            "pass": sweep.monotone,
        }
    )
    checks["qmf_sweep"] = sweep.passes

    ratio_check = mc_verify_qmf(qmf_noise, QMF_RATIO_K, n_qmf, seed + 1)
    ratio_pass = ratio_check.fused_mse <= QMF_RATIO_GATE * ratio_check.mean_candidate_mse
    rows.append(
        {
            "check": "qmf_ratio",
            "params": f"k={QMF_RATIO_K};sigma_m={QMF_SIGMA};gate={QMF_RATIO_GATE}",
            "empirical": ratio_check.fused_mse,
            "bound": QMF_RATIO_GATE * ratio_check.mean_candidate_mse,
            "bound_paper": "",
            "pass": ratio_pass,
        }
    )
    checks["qmf_ratio"] = ratio_pass

    conv = mqs_convergence_sweep(mqs_noise, sizes, n_mqs, seed + 2)
    lo, hi = MQS_SLOPE_WINDOW
    slope_pass = conv.monotone and lo <= conv.slope <= hi
    rows.append(
        {
            "check": "mqs_slope",
            "params": f"sizes={','.join(str(n) for n in sizes)};window=[{lo},{hi}]",
            "empirical": conv.slope,
            "bound": hi,
            "bound_paper": "",
            "pass": slope_pass,
        }
    )
    checks["mqs_slope"] = slope_pass

    grid_pass = True
    for i, n in enumerate(sizes):
        for j, eps in enumerate(eps_grid):
            check = mc_verify_mqs(mqs_noise, n, n, eps, n_mqs, seed + 10 + i * len(eps_grid) + j)
            grid_pass = grid_pass and check.passes
            rows.append(
                {
                    "check": "mqs",
                    "params": f"n={n};eps={eps}" + (";vacuous" if check.vacuous else ""),
                    "empirical": check.empirical_rate,
                    "bound": check.bound_range,
                    "bound_paper": check.bound,
                    "pass": check.passes,
                }
            )
    checks["mqs_grid"] = grid_pass

    with open(out_dir / "verify.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=["check", "params", "empirical", "bound", "bound_paper", "pass"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    all_pass = all(checks.values())
    summary = {"passes": all_pass, "checks": checks, "seed": seed, "quick": quick}
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return all_pass


def cmd_verify(args: argparse.Namespace) -> int:
    out = _require_out(args)
    ok = run_verification(
        out,
        seed=args.seed,
        quick=args.quick,
        trials_qmf=args.trials_qmf,
        trials_mqs=args.trials_mqs,
    )
    print(f"verification: {'all checks passed' if ok else 'FAILED'} (see {out / 'verify.csv'})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskfuse",
        description="Quality-aware pseudo-mask fusion toolbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene manifest")
    p.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
    p.add_argument("--preset", choices=["fragments"], default=None, help="fixed fixture instead of sampling")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--shapes", default=",".join(SHAPE_KINDS), help="comma-separated shape kinds")
    p.add_argument("--size-min", type=float, default=6.0)
    p.add_argument("--size-max", type=float, default=16.0)
    p.add_argument("--policy", choices=["disjoint", "allow-overlap"], default="disjoint")
    p.add_argument("--channels", type=int, choices=[1, 3], default=1)
    p.add_argument("--candidates", type=int, default=10, help="candidates per instance")
    p.add_argument("--sigma-mask", type=float, default=0.1)
    p.add_argument("--box-jitter", type=float, default=0.1)
    p.add_argument("--score-noise", type=float, default=0.1)
    _add_out_flag(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fill the pseudo section of a manifest")
    p.add_argument("manifest", type=Path)
    _add_config_flags(p)
    _add_out_flag(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("score", help="recompute pseudo-mask quality scores")
    p.add_argument("manifest", type=Path)
    _add_config_flags(p)
    _add_out_flag(p, "optional directory for scores.json")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("loss", help="quality-weighted dice loss between two manifests")
    p.add_argument("--pred", type=Path, required=True, help="manifest with student masks (pseudo section)")
    p.add_argument("--target", type=Path, required=True, help="manifest with fused pseudo masks")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("augment", help="copy-paste augmentation through a tutor bank")
    p.add_argument("manifest", type=Path)
    p.add_argument("--bank-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--capacity", type=int, default=80, help="bank capacity (default 80)")
    p.add_argument("--tau", type=float, default=0.5, help="bank admission threshold (default 0.5)")
    p.add_argument("--no-update-bank", action="store_true", help="draw tutors without admitting this scene")
    _add_out_flag(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("verify", help="Monte Carlo verification of the error bounds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="subsampled grid")
    p.add_argument("--trials-qmf", type=int, default=None)
    p.add_argument("--trials-mqs", type=int, default=None)
    _add_out_flag(p, "directory for verify.csv and summary.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare-bpma", help="baseline selector vs. ranked fusion, per instance")
    p.add_argument("manifest", type=Path)
    p.add_argument("--csv", type=Path, default=None, help="also write the table as CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare_bpma)

    p = sub.add_parser("render", help="write PGM/PPM images, masks, and overlays")
    p.add_argument("manifest", type=Path)
    _add_out_flag(p)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
