"""Trajectory and dense-reconstruction metrics.

Absolute trajectory error: the estimated trajectory is aligned to ground
truth with a least-squares rigid or similarity fit over the matched
translations, then the RMSE of the residual translations is reported.
Reconstruction quality: accuracy is the mean nearest-neighbor distance from
the estimated cloud to ground truth, completion the reverse direction, and
the symmetric distance is their mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, LengthMismatch
from .lie_groups import Sim3Transform, umeyama_align


@dataclass(frozen=True)
class AteReport:
    rmse: float
    alignment: Sim3Transform
    errors: np.ndarray  # per-frame translation residuals after alignment


@dataclass(frozen=True)
class ReconReport:
    accuracy: float
    completion: float
    chamfer: float


def ate_rmse(est: np.ndarray, gt: np.ndarray, align: str = "sim3") -> AteReport:
    """RMSE of translation residuals after trajectory alignment.

    Args:
        est: (n, 3) estimated positions, frame-matched with gt.
        gt: (n, 3) ground-truth positions.
        align: "sim3" fits scale, rotation, translation; "se3" fixes scale 1.

    Raises:
        LengthMismatch: trajectories of different lengths (or empty).
        DegenerateConfiguration: alignment impossible (collinear positions).
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    gt = np.atleast_2d(np.asarray(gt, dtype=float))
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3 or len(est) == 0:
        raise LengthMismatch(
            f"trajectories must be equal-length (n, 3); got {est.shape} vs {gt.shape}"
        )
    if align not in ("sim3", "se3"):
        raise ValueError(f"unknown alignment {align!r}")
    transform = umeyama_align(est, gt, with_scale=(align == "sim3"))
    errors = np.linalg.norm(transform.apply(est) - gt, axis=1)
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    return AteReport(rmse=rmse, alignment=transform, errors=errors)


def match_trajectories(
    est: dict[int, np.ndarray], gt: dict[int, np.ndarray]
) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Intersect two id-indexed trajectories into matched position arrays."""
    ids = sorted(set(est) & set(gt))
    if not ids:
        raise LengthMismatch("trajectories share no frame ids")
    return ids, np.stack([est[i] for i in ids]), np.stack([gt[i] for i in ids])


def recon_metrics(
    est_cloud: np.ndarray,
    gt_cloud: np.ndarray,
    trim_percentile: float | None = None,
) -> ReconReport:
    """Accuracy / completion / symmetric nearest-neighbor distance.

    The estimated cloud must already be expressed in the ground-truth frame
    (use the trajectory alignment). With `trim_percentile`, distances above
    that percentile are dropped on each side before averaging.
    """
    est = np.atleast_2d(np.asarray(est_cloud, dtype=float))
    gt = np.atleast_2d(np.asarray(gt_cloud, dtype=float))
    if est.size == 0 or gt.size == 0:
        raise EmptyCloud("both clouds must be non-empty")
    d_est = cKDTree(gt).query(est, workers=-1)[0]
    d_gt = cKDTree(est).query(gt, workers=-1)[0]
    if trim_percentile is not None:
        if not 0.0 < trim_percentile <= 100.0:
            raise ValueError("trim percentile must lie in (0, 100]")
        d_est = d_est[d_est <= np.percentile(d_est, trim_percentile)]
        d_gt = d_gt[d_gt <= np.percentile(d_gt, trim_percentile)]
    accuracy = float(d_est.mean())
    completion = float(d_gt.mean())
    return ReconReport(
        accuracy=accuracy,
        completion=completion,
        chamfer=0.5 * (accuracy + completion),
    )
