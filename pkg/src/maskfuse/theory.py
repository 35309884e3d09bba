"""Error bounds for fused pseudo masks, with Monte Carlo cross-checks.

The generalization error of a fused mask decomposes into three additive
terms: an approximation term (worst candidate distance to the truth), an
estimation term shrinking as 1/sqrt(K-hat) with confidence delta, and a
weighting term driven by score/IOU perturbations.  The quality score's
estimation error admits a Hoeffding-style tail bound; because the
stated exponent uses variances where the classical inequality uses
squared ranges, both forms are computed side by side.

Conventions fixed here and documented rather than tunable:
  - the mask norm is the pixel-RMS norm (Frobenius / sqrt(H*W)), so all
    bounds are resolution-independent;
  - the estimation term's asymptotic constant is 1;
  - Monte Carlo noise is uniform on [-sqrt(3)*sigma, +sqrt(3)*sigma],
    which is bounded and zero-mean with variance sigma^2.

All harnesses derive one independent stream per trial from (seed, trial),
so trial partitions can run in any order or in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import rms_distance, rms_norm
from .qam import CandidateSet, QamConfig, qmf_fuse
from .synth import CandidateSpec, SceneSpec, generate_candidates, generate_scene

SeedLike = Union[int, np.random.Generator]

MIN_TRIALS = 1000


@dataclass(frozen=True)
class BoundReport:
    """Additive three-term error bound for one fused mask."""

    approximation: float
    estimation: float
    weighting: float
    total: float
    delta: float
    k_hat: int
    m_hat: int

    def __post_init__(self) -> None:
        terms = (self.approximation, self.estimation, self.weighting)
        if any(t < 0.0 for t in terms):
            raise ValueError("bound terms must be nonnegative")
        if self.total != sum(terms):
            raise ValueError("total must equal the sum of the three terms")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class NoiseStats:
    """Noise model parameters: variances, relative perturbation caps, means."""

    sigma_s2: float
    sigma_m2: float
    sigma_u2: float = 0.0
    eps_s: float = 0.0
    eps_u: float = 0.0
    mu_s: float = 0.5
    mu_m: float = 0.5

    def __post_init__(self) -> None:
        if min(self.sigma_s2, self.sigma_m2, self.sigma_u2) < 0.0:
            raise ValueError("variances must be >= 0")
        if min(self.eps_s, self.eps_u) < 0.0:
            raise ValueError("relative perturbations must be >= 0")


def qmf_bound(
    candidates: CandidateSet,
    truth: np.ndarray,
    eps_w: float,
    delta: float,
    cfg: QamConfig,
) -> BoundReport:
    """Bound the pixel-RMS error of the fused mask against the true mask.

    approximation = max_n ||m_n - truth||, estimation = sqrt(log(1/delta) /
    k_hat) over the k_hat candidates passing the score threshold, and
    weighting = eps_w * max_n ||m_n||.  m_hat counts fused pixels above the
    threshold.  Undefined (raises) when no candidate passes the threshold.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if eps_w < 0.0:
        raise ValueError(f"eps_w must be >= 0, got {eps_w}")
    truth = np.asarray(truth, dtype=np.float64)
    k_hat = sum(1 for c in candidates.candidates if c.box_score > cfg.tau_m)
    if k_hat == 0:
        raise ValueError("bound undefined: no candidate passes the score threshold")
    approximation = max(rms_distance(c.mask, truth) for c in candidates.candidates)
    estimation = math.sqrt(math.log(1.0 / delta) / k_hat)
    weighting = eps_w * max(rms_norm(c.mask) for c in candidates.candidates)
    fused = qmf_fuse(candidates, cfg)
    m_hat = int((fused.mask > cfg.tau_m).sum())
    total = approximation + estimation + weighting
    return BoundReport(
        approximation=approximation,
        estimation=estimation,
        weighting=weighting,
        total=total,
        delta=delta,
        k_hat=k_hat,
        m_hat=m_hat,
    )


def _aligned(name: str, values: Union[float, Sequence[float]], n: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must align with s (length {n}), got shape {arr.shape}")
    return arr


def epsilon_w(
    s: Sequence[float],
    u: Sequence[float],
    eps_s: Union[float, Sequence[float]],
    eps_u: Union[float, Sequence[float]],
    cfg: QamConfig,
) -> float:
    """Worst-case relative weight perturbation from score and IOU errors.

    Evaluates (1/2) * |eps_s_n/s_n + eps_u_n/u_n| * sqrt(s_n*u_n) divided by
    the sum of sqrt(s_k*u_k) over candidates passing the score threshold,
    maximized over n.  Zero iff every perturbation is zero; scales linearly
    under uniform scaling of the perturbations.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if s_arr.ndim != 1 or s_arr.size == 0:
        raise ValueError("s must be a non-empty 1-D sequence")
    n = s_arr.size
    u_arr = _aligned("u", u, n)
    es = _aligned("eps_s", eps_s, n)
    eu = _aligned("eps_u", eps_u, n)
    if s_arr.min() <= 0.0 or u_arr.min() <= 0.0:
        raise ValueError("s and u must be strictly positive")
    sq = np.sqrt(s_arr * u_arr)
    denom = float(sq[s_arr > cfg.tau_m].sum())
    if denom <= 0.0:
        raise ValueError("denominator is zero: no candidate passes the score threshold")
    terms = 0.5 * np.abs(es / s_arr + eu / u_arr) * sq / denom
    return float(terms.max())


def _tail_sum(eps: float, k_hat: int, m_hat: int, denom_s: float, denom_m: float) -> float:
    return 2.0 * math.exp(-2.0 * k_hat * eps * eps / denom_s) + 2.0 * math.exp(
        -2.0 * m_hat * eps * eps / denom_m
    )


def _check_tail_args(eps: float, k_hat: int, m_hat: int, stats: NoiseStats) -> None:
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if k_hat < 1 or m_hat < 1:
        raise ValueError("k_hat and m_hat must be >= 1")
    if stats.sigma_s2 <= 0.0 or stats.sigma_m2 <= 0.0:
        raise ValueError("tail bounds need strictly positive variances")


def mqs_error_prob(
    eps: float, k_hat: int, m_hat: int, stats: NoiseStats, clamp: bool = True
) -> float:
    """Variance-form tail bound on the quality-score estimation error.

    2*exp(-2*k_hat*eps^2/sigma_s^2) + 2*exp(-2*m_hat*eps^2/sigma_m^2); the
    exponent divides by the variance directly.  With ``clamp`` the value is
    capped at 1 for reporting as a probability (the raw form is strictly
    decreasing in eps, k_hat, and m_hat).
    """
    _check_tail_args(eps, k_hat, m_hat, stats)
    raw = _tail_sum(eps, k_hat, m_hat, stats.sigma_s2, stats.sigma_m2)
    return min(raw, 1.0) if clamp else raw


def mqs_error_prob_range(
    eps: float, k_hat: int, m_hat: int, stats: NoiseStats, clamp: bool = True
) -> float:
    """Classical-range Hoeffding counterpart of ``mqs_error_prob``.

    For zero-mean uniform noise with variance sigma^2 the support width is
    2*sqrt(3)*sigma, so the classical exponent divides by the squared range
    12*sigma^2 instead of sigma^2.  Always valid for the bounded noise used
    by the Monte Carlo harnesses, hence the form acceptance gates on.
    """
    _check_tail_args(eps, k_hat, m_hat, stats)
    raw = _tail_sum(eps, k_hat, m_hat, 12.0 * stats.sigma_s2, 12.0 * stats.sigma_m2)
    return min(raw, 1.0) if clamp else raw


def _trial_seeds(rng: SeedLike, count: int) -> np.ndarray:
    """One independent integer seed per trial, derived from (seed, trial)."""
    if isinstance(rng, np.random.Generator):
        return rng.integers(2**63, size=count)
    return np.random.SeedSequence(int(rng)).generate_state(count, dtype=np.uint64)


def _simulate_quality(
    stats: NoiseStats, k_hat: int, m_hat: int, trials: int, seed: SeedLike
) -> np.ndarray:
    """Per-trial quality scores sqrt(s-bar * m-bar) under bounded noise."""
    seeds = _trial_seeds(seed, 2)
    hw_s = math.sqrt(3.0 * stats.sigma_s2)
    hw_m = math.sqrt(3.0 * stats.sigma_m2)
    rng_s = np.random.default_rng(int(seeds[0]))
    rng_m = np.random.default_rng(int(seeds[1]))
    s_bar = stats.mu_s + rng_s.uniform(-hw_s, hw_s, size=(trials, k_hat)).mean(axis=1)
    m_bar = stats.mu_m + rng_m.uniform(-hw_m, hw_m, size=(trials, m_hat)).mean(axis=1)
    return np.sqrt(np.clip(s_bar * m_bar, 0.0, None))


@dataclass(frozen=True)
class MqsCheck:
    """Empirical exceedance vs. both tail-bound forms for one configuration."""

    empirical_rate: float
    bound: float  # variance form, clamped
    bound_range: float  # classical range form, clamped
    vacuous: bool  # classical form >= 1, nothing to test
    passes: bool


def mc_verify_mqs(
    noise: NoiseStats, k_hat: int, m_hat: int, eps: float, trials: int, rng: SeedLike
) -> MqsCheck:
    """Empirically check the quality-score tail bound at one grid point.

    Simulates s-bar and m-bar as means of k_hat and m_hat bounded draws and
    measures how often sqrt(s-bar*m-bar) strays from sqrt(mu_s*mu_m) by at
    least eps.  Passing means the rate does not exceed the classical-range
    bound; a vacuous bound (>= 1) auto-passes with its flag set.
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    _check_tail_args(eps, k_hat, m_hat, noise)
    w = _simulate_quality(noise, k_hat, m_hat, trials, rng)
    target = math.sqrt(noise.mu_s * noise.mu_m)
    rate = float(np.mean(np.abs(w - target) >= eps))
    bound = mqs_error_prob(eps, k_hat, m_hat, noise)
    raw_range = mqs_error_prob_range(eps, k_hat, m_hat, noise, clamp=False)
    vacuous = raw_range >= 1.0
    passes = vacuous or rate <= raw_range
    return MqsCheck(
        empirical_rate=rate,
        bound=bound,
        bound_range=min(raw_range, 1.0),
        vacuous=vacuous,
        passes=passes,
    )


@dataclass(frozen=True)
class MqsSweep:
    """Quality-score RMS error as a function of sample count."""

    sizes: tuple[int, ...]
    rms_errors: tuple[float, ...]
    slope: float  # log-log fit; 1/sqrt(n) convergence shows as -0.5
    monotone: bool


def mqs_convergence_sweep(
    noise: NoiseStats, sizes: Sequence[int], trials: int, rng: SeedLike
) -> MqsSweep:
    """Measure how the quality-score error shrinks as k_hat = m_hat grows."""
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    if len(sizes) < 2:
        raise ValueError("need at least two sizes to fit a slope")
    seeds = _trial_seeds(rng, len(sizes))
    target = math.sqrt(noise.mu_s * noise.mu_m)
    errors = []
    for n, sub_seed in zip(sizes, seeds):
        w = _simulate_quality(noise, int(n), int(n), trials, int(sub_seed))
        errors.append(float(np.sqrt(np.mean((w - target) ** 2))))
    slope = float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(errors), 1)[0])
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    return MqsSweep(
        sizes=tuple(int(n) for n in sizes),
        rms_errors=tuple(errors),
        slope=slope,
        monotone=monotone,
    )


MC_SCENE_SIDE = 24  # frame for fusion trials; small keeps 2000 trials fast


@dataclass(frozen=True)
class QmfCheck:
    """Fused vs. single-candidate MSE under i.i.d. zero-mean pixel noise."""

    fused_mse: float
    mean_candidate_mse: float
    passes: bool


def mc_verify_qmf(
    noise: NoiseStats, k: int, trials: int, rng: SeedLike, cfg: QamConfig | None = None
) -> QmfCheck:
    """Measure the fusion gain over k noisy candidates of a synthetic truth.

    Each trial draws a fresh one-instance scene, corrupts its GT mask with
    i.i.d. bounded pixel noise into k candidates (boxes and scores exact,
    so fusion weights are uniform), and compares the fused mask's MSE
    against the truth with the average single-candidate MSE.  Passing
    requires a strict improvement, so k = 1 (identity) does not pass.
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cfg = cfg or QamConfig()
    sigma_m = math.sqrt(noise.sigma_m2)
    seeds = _trial_seeds(rng, 2 * trials)
    fused_total = 0.0
    cand_total = 0.0
    for t in range(trials):
        spec = SceneSpec(
            height=MC_SCENE_SIDE,
            width=MC_SCENE_SIDE,
            instance_count=1,
            size_range=(6.0, 14.0),
            seed=int(seeds[2 * t]),
        )
        scene = generate_scene(spec)
        cspec = CandidateSpec(
            count=k,
            sigma_mask=sigma_m,
            box_jitter=0.0,
            score_noise=0.0,
            seed=int(seeds[2 * t + 1]),
        )
        inst = scene.instances[0]
        cset = generate_candidates(scene, cspec)[inst.id]
        truth = scene.gt_masks[inst.id].astype(np.float64)
        fused = qmf_fuse(cset, cfg)
        fused_total += float(np.mean((fused.mask - truth) ** 2))
        cand_total += float(
            np.mean([np.mean((c.mask - truth) ** 2) for c in cset.candidates])
        )
    fused_mse = fused_total / trials
    cand_mse = cand_total / trials
    return QmfCheck(
        fused_mse=fused_mse,
        mean_candidate_mse=cand_mse,
        passes=fused_mse < cand_mse,
    )


@dataclass(frozen=True)
class QmfSweep:
    """Fused MSE across a doubling sweep of the fusion count."""

    ks: tuple[int, ...]
    fused_mses: tuple[float, ...]
    candidate_mses: tuple[float, ...]
    monotone: bool  # non-increasing within a 10% noise allowance
    passes: bool


def qmf_k_sweep(
    noise: NoiseStats,
    ks: Sequence[int],
    trials: int,
    rng: SeedLike,
    cfg: QamConfig | None = None,
) -> QmfSweep:
    """Run ``mc_verify_qmf`` across fusion counts and check the MSE trend."""
    if len(ks) < 2:
        raise ValueError("need at least two k values to check a trend")
    seeds = _trial_seeds(rng, len(ks))
    checks = [
        mc_verify_qmf(noise, int(k), trials, int(seed), cfg)
        for k, seed in zip(ks, seeds)
    ]
    fused = tuple(c.fused_mse for c in checks)
    cands = tuple(c.mean_candidate_mse for c in checks)
    monotone = all(b <= a * 1.10 for a, b in zip(fused, fused[1:]))
    return QmfSweep(
        ks=tuple(int(k) for k in ks),
        fused_mses=fused,
        candidate_mses=cands,
        monotone=monotone,
        passes=monotone and all(c.passes for c in checks),
    )
