"""Heightmap-based foothold evaluation, foothold selection, and pose
adaptation."""

from .curves import (
    DEFAULT_BASES,
    HIP_HEIGHT_RANGE,
    N_HEIGHT_SAMPLES,
    SafeCurve,
    fit_rbf,
    hip_heights,
    nsf,
    pose_evaluation,
    rbf_basis,
    vfa_select,
)
from .fec import (
    FecConfig,
    FecMask,
    GaitParams,
    Heightmap,
    default_swing_path,
    erode,
    eval_fc,
    eval_kf,
    eval_lc,
    eval_tr,
    fec,
)
from .pose import (
    POSE_MAX,
    POSE_MIN,
    PoseCommand,
    PoseOptResult,
    hip_height_from_pose,
    pose_cost,
    pose_optimize_receding,
    pose_optimize_single,
    tbr_baseline,
)

__all__ = [
    "DEFAULT_BASES", "HIP_HEIGHT_RANGE", "N_HEIGHT_SAMPLES", "SafeCurve",
    "fit_rbf", "hip_heights", "nsf", "pose_evaluation", "rbf_basis",
    "vfa_select", "FecConfig", "FecMask", "GaitParams", "Heightmap",
    "default_swing_path", "erode", "eval_fc", "eval_kf", "eval_lc", "eval_tr",
    "fec", "POSE_MAX", "POSE_MIN", "PoseCommand", "PoseOptResult",
    "hip_height_from_pose", "pose_cost", "pose_optimize_receding",
    "pose_optimize_single", "tbr_baseline",
]
