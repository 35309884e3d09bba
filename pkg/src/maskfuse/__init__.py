"""Quality-aware pseudo-mask fusion for box-supervised segmentation.

The package turns noisy per-box mask proposals into a single pseudo mask
per instance (ranking + weighted fusion), attaches a quality score used to
weight the training loss, and augments scenes by pasting high-quality
tutors over learners.  Companion modules provide synthetic ground truth,
error-bound calculators with Monte Carlo verification, and a CLI over a
file manifest format.
"""

from .core import (
    Box,
    BoxRaster,
    GtInstance,
    as_binary_mask,
    as_prob_mask,
    box_to_mask,
    dice_loss,
    iou,
    mask_overlaps_box,
    nms,
    rms_distance,
    rms_norm,
    tight_box,
)
from .pc import (
    AugmentResult,
    BankUpdate,
    MemoryBank,
    PasteResult,
    Scene,
    TutorEntry,
    augment,
    paste_overlapping,
    select_tutor,
    update_bank,
)
from .qam import (
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
from .synth import (
    CandidateSpec,
    SceneSpec,
    fragments_scenario,
    fragments_scene,
    generate_candidates,
    generate_scene,
)
from .theory import (
    BoundReport,
    MqsCheck,
    MqsSweep,
    NoiseStats,
    QmfCheck,
    QmfSweep,
    epsilon_w,
    mc_verify_mqs,
    mc_verify_qmf,
    mqs_convergence_sweep,
    mqs_error_prob,
    mqs_error_prob_range,
    qmf_bound,
    qmf_k_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentResult",
    "BankUpdate",
    "BoundReport",
    "Box",
    "BoxRaster",
    "Candidate",
    "CandidateSet",
    "CandidateSpec",
    "FusedPseudoMask",
    "GtInstance",
    "MemoryBank",
    "MqsCheck",
    "MqsSweep",
    "NoValidCandidatesError",
    "NoiseStats",
    "PasteResult",
    "QamConfig",
    "QmfCheck",
    "QmfSweep",
    "Scene",
    "SceneSpec",
    "TutorEntry",
    "adaptive_k",
    "as_binary_mask",
    "as_prob_mask",
    "augment",
    "box_quality_ranking",
    "box_to_mask",
    "bpma_select",
    "dice_loss",
    "epsilon_w",
    "fragments_scenario",
    "fragments_scene",
    "generate_candidates",
    "generate_scene",
    "iou",
    "mask_overlaps_box",
    "mask_quality_score",
    "mc_verify_mqs",
    "mc_verify_qmf",
    "mqs_convergence_sweep",
    "mqs_error_prob",
    "mqs_error_prob_range",
    "nms",
    "paste_overlapping",
    "process_instance",
    "qmf_bound",
    "qmf_fuse",
    "qmf_k_sweep",
    "quality_weighted_loss",
    "rms_distance",
    "rms_norm",
    "select_tutor",
    "tight_box",
    "update_bank",
]
