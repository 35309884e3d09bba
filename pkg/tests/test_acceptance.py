"""Acceptance gate: one criterion per test, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
print.  Every criterion re-derives its expected values through an
independent in-test script (plain arithmetic, pixel loops, or a shadow
model) and enforces its own runtime budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace
from typing import Callable

import numpy as np

from maskfuse.cli import main
from maskfuse.core import Box, GtInstance, box_to_mask, dice_loss, rms_distance
from maskfuse.pc import (
    MemoryBank,
    Scene,
    augment,
    paste_overlapping,
    select_tutor,
    update_bank,
)
from maskfuse.qam import (
    Candidate,
    CandidateSet,
    FusedPseudoMask,
    NoValidCandidatesError,
    QamConfig,
    adaptive_k,
    box_quality_ranking,
    bpma_select,
    mask_quality_score,
    process_instance,
    qmf_fuse,
    quality_weighted_loss,
)
from maskfuse.synth import CandidateSpec, SceneSpec, fragments_scenario, generate_candidates, generate_scene
from maskfuse.theory import NoiseStats, epsilon_w, mc_verify_mqs, mc_verify_qmf, mqs_convergence_sweep, qmf_k_sweep

CFG = QamConfig()
MAX_REPORTED = 5  # cap recorded failure messages per criterion


def run_criterion(number: int, label: str, budget_s: float, body: Callable[[list], None]) -> None:
    failures: list[str] = []
    start = time.perf_counter()
    try:
        body(failures)
    except Exception as exc:  # ensure the pass/fail line still prints
        failures.append(f"exception: {exc!r}")
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        failures.append(f"runtime {elapsed:.2f}s exceeds budget {budget_s:.0f}s")
    status = "PASS" if not failures else "FAIL"
    print(f"criterion {number:02d} {status}: {label} ({elapsed:.2f}s)", flush=True)
    assert not failures, "\n".join(failures)


def record(failures: list[str], condition: bool, message: str) -> None:
    if not condition and len(failures) < MAX_REPORTED:
        failures.append(message)


def center_inside(box: Box, h: int, w: int) -> np.ndarray:
    """Pixel-center membership test, written independently of the raster code."""
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    rows = (ys >= box.y1) & (ys < box.y2)
    cols = (xs >= box.x1) & (xs < box.x2)
    return rows[:, None] & cols[None, :]


def test_criterion_01_weight_simplex():
    def body(failures: list[str]) -> None:
        for seed in range(10000):
            scene = generate_scene(
                SceneSpec(height=16, width=16, instance_count=1, size_range=(4.0, 10.0), seed=seed)
            )
            cspec = CandidateSpec(
                count=1 + seed % 6,
                sigma_mask=0.15,
                box_jitter=0.25,
                score_noise=0.4,
                seed=10000 + seed,
            )
            inst = scene.instances[0]
            cset = generate_candidates(scene, cspec)[inst.id]
            scores = np.array([c.box_score for c in cset.candidates])
            try:
                fused = qmf_fuse(cset, CFG)
            except NoValidCandidatesError:
                record(failures, bool((scores <= CFG.tau_m).all()), f"seed {seed}: spurious reject")
                continue
            w = fused.weights
            record(failures, bool(w.min() >= 0.0), f"seed {seed}: negative weight")
            record(failures, abs(float(w.sum()) - 1.0) <= 1e-9, f"seed {seed}: weight sum {w.sum()!r}")
            record(
                failures,
                bool((w[scores <= CFG.tau_m] == 0.0).all()),
                f"seed {seed}: weight on a below-threshold candidate",
            )
            stack = np.stack([c.mask for c in cset.candidates])
            lo, hi = stack.min(axis=0), stack.max(axis=0)
            record(
                failures,
                bool((fused.mask >= lo - 1e-12).all() and (fused.mask <= hi + 1e-12).all()),
                f"seed {seed}: fused pixel outside the candidate envelope",
            )

    run_criterion(1, "fusion weight simplex over 10000 candidate sets", 10.0, body)


def test_criterion_02_adaptive_count_table():
    def body(failures: list[str]) -> None:
        table = {1024.0: 2, 9216.0: 10, 4096.0: 6}
        for area, expected in table.items():
            record(failures, adaptive_k(area, CFG) == expected, f"area {area}: k != {expected}")
        areas = np.linspace(1.0, 12000.0, 200)
        ks = [adaptive_k(float(a), CFG) for a in areas]
        record(failures, all(b >= a for a, b in zip(ks, ks[1:])), "sweep not monotone")

    run_criterion(2, "size-adaptive fusion count table and monotone sweep", 1.0, body)


def test_criterion_03_weight_arithmetic_oracle():
    def body(failures: list[str]) -> None:
        # independent script first: indicator * sqrt(s*u), normalized
        raw = [math.sqrt(0.8 * 0.9), math.sqrt(0.6 * 0.5)]
        expected = [r / sum(raw) for r in raw]
        record(failures, abs(expected[0] - 0.60772) < 5e-6, "script disagrees with 0.60772")
        record(failures, abs(expected[1] - 0.39228) < 5e-6, "script disagrees with 0.39228")

        gt = GtInstance(id="g", class_id=0, box=Box(0.0, 0.0, 10.0, 10.0))
        cands = (
            Candidate(box=Box(0.0, 0.0, 10.0, 9.0), box_score=0.8, cls_score=0.5, mask=np.full((12, 12), 0.9)),
            Candidate(box=Box(0.0, 0.0, 10.0, 5.0), box_score=0.6, cls_score=0.5, mask=np.full((12, 12), 0.6)),
        )
        fused = qmf_fuse(CandidateSet.build(gt, cands), CFG)
        for n in range(2):
            record(
                failures,
                abs(float(fused.weights[n]) - expected[n]) <= 1e-9,
                f"weight {n}: {fused.weights[n]!r} != {expected[n]!r}",
            )

    run_criterion(3, "two-candidate weight arithmetic oracle", 1.0, body)


def test_criterion_04_quality_score_oracle():
    def body(failures: list[str]) -> None:
        frame = 16
        gt_box = Box(0.0, 0.0, 10.0, 10.0)
        gt = GtInstance(id="g", class_id=0, box=gt_box)

        def cset_with_scores(scores: list[float]) -> CandidateSet:
            cands = tuple(
                Candidate(box=gt_box, box_score=s, cls_score=0.5, mask=np.zeros((frame, frame)))
                for s in scores
            )
            return CandidateSet.build(gt, cands)

        # exact case: score mean (0.63 + 0.65)/2 = 0.64, gated pixels all 0.81
        fused = np.zeros((frame, frame))
        fused[2:5, 2:5] = 0.81
        w = mask_quality_score(cset_with_scores([0.63, 0.65]), fused, gt_box, CFG)
        record(failures, abs(w - 0.72) <= 1e-12, f"exact case: {w!r} != 0.72")

        rng = np.random.default_rng(404)
        for trial in range(100):
            h = w_ = frame
            x1 = float(rng.uniform(0.0, 8.0))
            y1 = float(rng.uniform(0.0, 8.0))
            box = Box(x1, y1, float(rng.uniform(x1 + 1.0, 15.5)), float(rng.uniform(y1 + 1.0, 15.5)))
            inst = GtInstance(id="g", class_id=0, box=box)
            scores = [float(s) for s in rng.uniform(size=int(rng.integers(1, 6)))]
            cands = tuple(
                Candidate(box=box, box_score=s, cls_score=0.5, mask=np.zeros((h, w_)))
                for s in scores
            )
            cset = CandidateSet.build(inst, cands)
            pixels = rng.uniform(size=(h, w_))

            # brute-force oracle: loop pixel centers, gate both factors at tau
            passing = [s for s in scores if s > CFG.tau_m]
            if not passing:
                expected = 0.0
            else:
                vals = []
                for y in range(h):
                    for x in range(w_):
                        cx, cy = x + 0.5, y + 0.5
                        if box.x1 <= cx < box.x2 and box.y1 <= cy < box.y2 and pixels[y, x] > CFG.tau_m:
                            vals.append(pixels[y, x])
                if not vals:
                    expected = 0.0
                else:
                    expected = math.sqrt(
                        (sum(passing) / len(passing)) * (sum(vals) / len(vals))
                    )
            got = mask_quality_score(cset, pixels, box, CFG)
            record(failures, abs(got - expected) <= 1e-9, f"trial {trial}: {got!r} != {expected!r}")

    run_criterion(4, "quality score arithmetic and pixel-loop oracle", 5.0, body)


def test_criterion_05_fragments_regression():
    def body(failures: list[str]) -> None:
        cset = fragments_scenario()
        record(failures, bpma_select(cset) is None, "baseline selector accepted a fragment")
        top = box_quality_ranking(cset, 1).candidates[0]
        record(failures, top is cset.candidates[2], "ranking did not keep the u = 0.85 candidate")

        truth = box_to_mask(cset.gt.box, 64, 64).mask.astype(np.float64)
        fused = process_instance(cset, CFG)
        fused_err = rms_distance(fused.mask, truth)
        frag_errs = [rms_distance(c.mask, truth) for c in cset.candidates[:2]]
        record(
            failures,
            all(fused_err < e for e in frag_errs),
            f"fused rms {fused_err!r} not below fragments {frag_errs!r}",
        )
        again = process_instance(fragments_scenario(), CFG)
        record(
            failures,
            again.mask.tobytes() == fused.mask.tobytes() and again.quality == fused.quality,
            "fragments pipeline is not deterministic",
        )

    run_criterion(5, "fragments regression: ranking beats confidence selection", 1.0, body)


def test_criterion_06_fusion_error_reduction():
    def body(failures: list[str]) -> None:
        noise = NoiseStats(sigma_s2=0.0, sigma_m2=0.2**2)
        check = mc_verify_qmf(noise, k=10, trials=2000, rng=100)
        record(
            failures,
            check.fused_mse <= 0.6 * check.mean_candidate_mse,
            f"k=10: fused {check.fused_mse!r} > 0.6 * {check.mean_candidate_mse!r}",
        )
        sweep = qmf_k_sweep(noise, [2, 4, 8], trials=2000, rng=101)
        record(
            failures,
            all(b <= a * 1.10 for a, b in zip(sweep.fused_mses, sweep.fused_mses[1:])),
            f"fused MSE not non-increasing within 10%: {sweep.fused_mses!r}",
        )

    run_criterion(6, "fusion cuts mask MSE and improves with count", 30.0, body)


def test_criterion_07_score_concentration():
    def body(failures: list[str]) -> None:
        noise = NoiseStats(sigma_s2=0.25, sigma_m2=0.25)
        sizes = (16, 64, 256, 1024)
        sweep = mqs_convergence_sweep(noise, sizes, trials=5000, rng=200)
        record(failures, sweep.monotone, f"rms errors not monotone: {sweep.rms_errors!r}")
        record(
            failures,
            -0.65 <= sweep.slope <= -0.35,
            f"log-log slope {sweep.slope!r} outside [-0.65, -0.35]",
        )
        for i, n in enumerate(sizes):
            for j, eps in enumerate((0.05, 0.1, 0.2)):
                check = mc_verify_mqs(noise, n, n, eps, trials=5000, rng=300 + 10 * i + j)
                record(
                    failures,
                    check.passes,
                    f"n={n} eps={eps}: rate {check.empirical_rate!r} exceeds bound {check.bound_range!r}",
                )

    run_criterion(7, "quality score concentration and tail bounds", 60.0, body)


def test_criterion_08_weight_perturbation_cap():
    def body(failures: list[str]) -> None:
        rng = np.random.default_rng(808)
        for trial in range(1000):
            n = int(rng.integers(1, 9))
            s = rng.uniform(0.05, 1.0, size=n)
            if s.max() <= CFG.tau_m:
                s[0] = float(rng.uniform(0.55, 1.0))
            u = rng.uniform(0.05, 1.0, size=n)
            es = rng.uniform(0.0, 0.3, size=n)
            eu = rng.uniform(0.0, 0.3, size=n)

            denom = sum(math.sqrt(sk * uk) for sk, uk in zip(s, u) if sk > CFG.tau_m)
            expected = max(
                0.5 * abs(a / sn + b / un) * math.sqrt(sn * un) / denom
                for sn, un, a, b in zip(s, u, es, eu)
            )
            got = epsilon_w(s, u, es, eu, CFG)
            record(failures, abs(got - expected) <= 1e-12, f"trial {trial}: {got!r} != {expected!r}")

        record(failures, epsilon_w([0.9, 0.7], [0.8, 0.6], 0.0, 0.0, CFG) == 0.0, "zero case")
        s, u = [0.9, 0.7], [0.8, 0.6]
        base = epsilon_w(s, u, [0.02, 0.05], [0.01, 0.03], CFG)
        scaled = epsilon_w(s, u, [0.02 * 3.5, 0.05 * 3.5], [0.01 * 3.5, 0.03 * 3.5], CFG)
        record(failures, abs(scaled - 3.5 * base) <= 1e-12 * max(1.0, scaled), "not linear in scale")

    run_criterion(8, "weight perturbation cap matches exhaustive evaluation", 5.0, body)


def test_criterion_09_bank_and_paste_invariants():
    def body(failures: list[str]) -> None:
        side = 16
        bank = MemoryBank()  # capacity 80, tau 0.5
        shadow: list[tuple[tuple[str, str], int]] = []
        next_seq = 0

        for t in range(1000):
            rng = np.random.default_rng([11, t])
            instances: list[GtInstance] = []
            pseudo: dict[str, FusedPseudoMask] = {}
            masks: dict[str, np.ndarray] = {}
            for i in range(1 + t % 2):
                y0, x0 = int(rng.integers(0, 11)), int(rng.integers(0, 11))
                hgt, wid = int(rng.integers(2, 6)), int(rng.integers(2, 6))
                mask = np.zeros((side, side))
                mask[y0 : y0 + hgt, x0 : x0 + wid] = 1.0
                box = Box(float(x0), float(y0), float(x0 + wid), float(y0 + hgt))
                inst_id = f"inst{i}"
                instances.append(GtInstance(id=inst_id, class_id=i, box=box))
                masks[inst_id] = mask
                if rng.uniform() >= 0.1:
                    pseudo[inst_id] = FusedPseudoMask(
                        mask=mask,
                        quality=float(rng.uniform(0.2, 1.0)),
                        weights=np.array([1.0]),
                        k_used=1,
                        valid_count=1,
                    )
            scene = Scene(
                image=np.full((side, side, 1), 0.4),
                instances=instances,
                pseudo=pseudo,
                id=f"cyc{t}",
            )

            # shadow admission model, written independently
            for inst in instances:
                fused = pseudo.get(inst.id)
                if fused is None or fused.quality <= 0.5:
                    continue
                foot = fused.mask > 0.5
                if not foot.any():
                    continue
                blocked = any(
                    (foot & center_inside(other.box, side, side)).any()
                    for other in instances
                    if other.id != inst.id
                )
                if blocked:
                    continue
                shadow.append(((scene.id, inst.id), next_seq))
                next_seq += 1
                if len(shadow) > 80:
                    shadow.pop(0)

            bank = update_bank(bank, scene).bank
            record(failures, len(bank) <= 80, f"cycle {t}: bank over capacity")
            record(
                failures,
                [(e.source, e.seq) for e in bank.entries] == shadow,
                f"cycle {t}: bank contents diverge from the shadow FIFO",
            )
            record(
                failures,
                all(e.score > 0.5 for e in bank.entries),
                f"cycle {t}: admitted entry at or below tau",
            )

            result = augment(scene, bank, np.random.default_rng([13, t]))

            # replay: same seed, manual select + paste, learners in order
            replay = scene
            rng_replay = np.random.default_rng([13, t])
            for learner in list(scene.instances):
                tutor = select_tutor(bank, rng_replay)
                if tutor is None:
                    continue
                before = {i.id for i in replay.instances}
                replay, ok = paste_overlapping(replay, learner, tutor, rng_replay)
                if not ok:
                    continue
                (new_id,) = {i.id for i in replay.instances} - before
                foot = replay.gt_masks[new_id] > 0
                overlap = int((foot & center_inside(learner.box, side, side)).sum())
                record(failures, overlap >= 1, f"cycle {t}: paste misses the learner box")
            record(
                failures,
                [i.id for i in result.scene.instances] == [i.id for i in replay.instances]
                and result.scene.image.tobytes() == replay.image.tobytes(),
                f"cycle {t}: augment does not replay deterministically",
            )

        record(failures, next_seq > 80, "too few admissions to exercise eviction")

    run_criterion(9, "bank admission, FIFO eviction, and paste invariants", 20.0, body)


def test_criterion_10_weighted_loss_algebra():
    def body(failures: list[str]) -> None:
        def fused_for(mask: np.ndarray, quality: float) -> FusedPseudoMask:
            return FusedPseudoMask(
                mask=mask, quality=quality, weights=np.array([1.0]), k_used=1, valid_count=1
            )

        # perfect agreement
        mask = np.full((4, 4), 0.7)
        record(
            failures,
            quality_weighted_loss([(mask.copy(), fused_for(mask, 0.9))]) == 0.0,
            "self loss is not exactly zero",
        )

        # construct student = c * target with c solving the smoothing-aware
        # quadratic so the dice value hits the requested target exactly
        eps = 1e-6

        def scaled_pair(target_dice: float, q: np.ndarray) -> np.ndarray:
            r = 1.0 - target_dice
            s = float((q * q).sum())
            a, b, c0 = r * s, -2.0 * s, r * s + (r - 1.0) * eps
            small = (-b - math.sqrt(b * b - 4.0 * a * c0)) / (2.0 * a)
            large = (-b + math.sqrt(b * b - 4.0 * a * c0)) / (2.0 * a)
            return q * (small if small <= 1.0 else large)

        q1 = np.full((4, 4), 0.5)
        p1 = scaled_pair(0.2, q1)
        record(failures, abs(dice_loss(p1, q1) - 0.2) <= 1e-12, "dice 0.2 construction off")
        q2 = np.full((4, 4), 0.5)
        p2 = scaled_pair(0.9, q2)
        record(failures, abs(dice_loss(p2, q2) - 0.9) <= 1e-12, "dice 0.9 construction off")
        loss = quality_weighted_loss([(p1, fused_for(q1, 1.0)), (p2, fused_for(q2, 0.0))])
        record(failures, abs(loss - 0.1) <= 1e-12, f"(1, 0.2), (0, 0.9) case: {loss!r} != 0.1")

        rng = np.random.default_rng(1010)
        for trial in range(100):
            pairs = []
            scaled = []
            c = float(rng.uniform(0.05, 1.0))
            for _ in range(int(rng.integers(1, 5))):
                student = rng.uniform(size=(5, 5))
                target = rng.uniform(size=(5, 5))
                quality = float(rng.uniform(0.0, 1.0))
                pairs.append((student, fused_for(target, quality)))
                scaled.append((student, fused_for(target, quality * c)))
            base = quality_weighted_loss(pairs)
            got = quality_weighted_loss(scaled)
            record(
                failures,
                abs(got - c * base) <= 1e-12,
                f"trial {trial}: loss not linear in the quality scale",
            )

    run_criterion(10, "weighted loss: zero at agreement, exact values, linear in quality", 1.0, body)


def test_criterion_11_cli_pipeline_determinism(tmp_path):
    def body(failures: list[str]) -> None:
        def run(root) -> dict[str, bytes]:
            steps = [
                ["synth", "--seed", "0", "--preset", "fragments", "--out", str(root / "synth")],
                ["fuse", str(root / "synth"), "--out", str(root / "fused")],
                ["score", str(root / "fused"), "--out", str(root / "scores")],
                [
                    "augment",
                    str(root / "fused"),
                    "--bank-dir",
                    str(root / "bank"),
                    "--seed",
                    "3",
                    "--out",
                    str(root / "aug"),
                ],
                ["verify", "--quick", "--seed", "0", "--out", str(root / "verify")],
                ["render", str(root / "aug"), "--out", str(root / "render")],
            ]
            for argv in steps:
                code = main(argv)
                record(failures, code == 0, f"{argv[0]} exited {code}")
            return {
                p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*"))
                if p.is_file()
            }

        first = run(tmp_path / "run1")
        second = run(tmp_path / "run2")
        record(failures, set(first) == set(second), "artifact file sets differ")
        diffs = [name for name in first if second.get(name) != first[name]]
        record(failures, not diffs, f"artifacts differ between runs: {diffs[:5]}")

    run_criterion(11, "CLI pipeline determinism on the fragments preset", 30.0, body)
