"""Relative 4x4 homography estimation from 3D point correspondences.

Two overlapping reconstructions of the same surface are related, point for
point, by a projective transform: for correspondences (a, b) the homogeneous
vectors [a;1] and H [b;1] are proportional. Each correspondence therefore
yields six linear constraints on the 16 entries of H (one per coordinate
pair), of which three are independent, so five points give a minimal solve.
The module provides the constraint construction, the normalized direct
linear solve, a seeded RANSAC wrapper, and the similarity-based alternative
used by the baseline alignment mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateSample,
    InsufficientInliers,
    PointAtInfinity,
    ZeroScale,
)
from .lie_groups import Homography, Sim3Transform, umeyama_align

# Coordinate pairs (p, q), p < q, whose proportionality is enforced.
_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# Two smallest singular values closer than this ratio of the largest mean a
# non-unique nullspace (e.g. coplanar points).
_RANK_GAP_RATIO = 1e-6


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair: `a` in the target frame, `b` in the source."""

    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class NormalizationTransform:
    """Similarity conditioning map: centroid to 0, RMS radius to sqrt(3)."""

    t: np.ndarray  # 4x4, [s I | -s c; 0 | 1]

    @classmethod
    def fit(cls, points: np.ndarray) -> "NormalizationTransform":
        pts = np.asarray(points, dtype=float)
        centroid = pts.mean(axis=0)
        rms = float(np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1))))
        if rms <= 1e-12:
            raise DegenerateConfiguration("points are coincident")
        s = np.sqrt(3.0) / rms
        t = np.eye(4)
        t[:3, :3] *= s
        t[:3, 3] = -s * centroid
        return cls(t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.t[0, 0] + self.t[:3, 3]


@dataclass(frozen=True)
class RansacResult:
    h: Homography
    inlier_mask: np.ndarray
    inlier_count: int
    iterations_run: int


def build_constraint_rows(c: Correspondence) -> np.ndarray:
    """Six 16-vectors encoding proportionality of [a;1] and H [b;1].

    Row (p, q) states a_p (H b~)_q - a_q (H b~)_p = 0, linear in the
    row-major entries of H. The 6x16 block has rank at most 3.
    """
    return _constraint_rows(
        np.asarray(c.a, dtype=float)[None, :], np.asarray(c.b, dtype=float)[None, :]
    )[0]


def _constraint_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized constraint blocks, shape (n, 6, 16)."""
    n = len(a)
    ah = np.hstack([a, np.ones((n, 1))])
    bh = np.hstack([b, np.ones((n, 1))])
    rows = np.zeros((n, 6, 16))
    for r, (p, q) in enumerate(_PAIRS):
        rows[:, r, 4 * q:4 * q + 4] += ah[:, p, None] * bh
        rows[:, r, 4 * p:4 * p + 4] -= ah[:, q, None] * bh
    return rows


def _nullspace_from_rows(rows: np.ndarray) -> np.ndarray:
    """Smallest-singular-vector solve of stacked (k, 16) constraint rows.

    Returns the 4x4 solution (arbitrary scale). Raises DegenerateSample when
    the nullspace is not unique.
    """
    _, svals, vt = np.linalg.svd(rows, full_matrices=False)
    if svals[0] <= 0.0 or svals[14] <= _RANK_GAP_RATIO * svals[0]:
        raise DegenerateSample(
            "constraint matrix has a nullspace of dimension > 1 "
            "(degenerate, e.g. coplanar, points)"
        )
    return vt[-1].reshape(4, 4)


def _nullspace_solution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _nullspace_from_rows(_constraint_rows(a, b).reshape(-1, 16))


def _finalize(h: np.ndarray) -> Homography:
    """Determinant checks, quartic-root rescaling, and sign canonicalization."""
    det = float(np.linalg.det(h))
    if abs(det) <= 1e-12:
        raise DegenerateSample(f"solution determinant {det!r} is numerically zero")
    if det < 0.0:
        raise DegenerateSample(
            "solution determinant is negative; no real rescaling reaches "
            "unit determinant"
        )
    h = h / det ** 0.25
    trace = float(np.trace(h))
    if trace < 0.0 or (trace == 0.0 and h.flat[np.argmax(np.abs(h))] < 0.0):
        h = -h
    return Homography(h)


def solve_dlt(corr_a: np.ndarray, corr_b: np.ndarray) -> Homography:
    """Direct linear estimate of H with [a;1] ~ H [b;1], least squares.

    Both point sets are conditioned to zero centroid and RMS radius sqrt(3)
    before the solve; the result is denormalized and rescaled by the quartic
    root of its determinant so det(H) = 1.

    Args:
        corr_a: (n, 3) points in the target frame, n >= 5.
        corr_b: (n, 3) corresponding points in the source frame.

    Raises:
        DegenerateSample: non-unique nullspace (e.g. coplanar source points),
            numerically zero determinant, or negative determinant.
    """
    a = np.atleast_2d(np.asarray(corr_a, dtype=float))
    b = np.atleast_2d(np.asarray(corr_b, dtype=float))
    if a.shape != b.shape or a.shape[1] != 3:
        raise ValueError("correspondence arrays must both be (n, 3)")
    if len(a) < 5:
        raise InsufficientInliers(f"need at least 5 correspondences, got {len(a)}")
    norm_a = NormalizationTransform.fit(a)
    norm_b = NormalizationTransform.fit(b)
    h_norm = _nullspace_solution(norm_a.apply(a), norm_b.apply(b))
    h = np.linalg.inv(norm_a.t) @ h_norm @ norm_b.t
    return _finalize(h)


def transfer_error(h: Homography, c: Correspondence) -> float:
    """Euclidean distance between `a` and the dehomogenized H [b;1]."""
    errs = _transfer_errors(
        h.m, np.asarray(c.a, dtype=float)[None, :], np.asarray(c.b, dtype=float)[None, :]
    )
    if not np.isfinite(errs[0]):
        raise PointAtInfinity("homogeneous w-component vanished")
    return float(errs[0])


def _transfer_errors(h: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized transfer errors; points at infinity come back as +inf."""
    n = len(b)
    bh = np.hstack([b, np.ones((n, 1))])
    proj = bh @ h.T
    w = proj[:, 3]
    errs = np.full(n, np.inf)
    ok = np.abs(w) > 1e-12
    diff = proj[ok, :3] / w[ok, None] - a[ok]
    errs[ok] = np.linalg.norm(diff, axis=1)
    return errs


def ransac_homography(
    corr_a: np.ndarray,
    corr_b: np.ndarray,
    iterations: int = 300,
    threshold: float = 0.01,
    seed: int = 0,
) -> RansacResult:
    """Robust 5-point estimation of H with [a;1] ~ H [b;1].

    Both sides are conditioned once (zero centroid, RMS radius sqrt(3)) and
    the inlier threshold is applied to transfer errors in that normalized
    frame, which makes the constant meaningful regardless of scene scale.
    Minimal 5-point subsets are drawn from a seed-derived, iteration-indexed
    stream, so results are reproducible bit for bit. The best model (most
    inliers, then smallest summed inlier error, then earliest iteration) is
    polished by one all-inlier refit.

    Raises:
        InsufficientInliers: fewer than 5 correspondences, or no sampled
            model reached 5 inliers.
    """
    a = np.atleast_2d(np.asarray(corr_a, dtype=float))
    b = np.atleast_2d(np.asarray(corr_b, dtype=float))
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("correspondence arrays must both be (n, 3)")
    n = len(a)
    if n < 5:
        raise InsufficientInliers(f"need at least 5 correspondences, got {n}")

    norm_a = NormalizationTransform.fit(a)
    norm_b = NormalizationTransform.fit(b)
    an = norm_a.apply(a)
    bn = norm_b.apply(b)

    rng = np.random.default_rng(seed)
    subsets = np.stack([rng.choice(n, size=5, replace=False) for _ in range(iterations)])

    # All minimal systems are solved in one batched SVD; per-model transfer
    # errors are evaluated against every correspondence in one einsum.
    rows_all = _constraint_rows(an, bn)
    stacked = rows_all[subsets].reshape(iterations, 30, 16)
    _, svals, vt = np.linalg.svd(stacked, full_matrices=False)
    models = vt[:, -1, :].reshape(iterations, 4, 4)
    dets = np.linalg.det(models)
    valid = (
        (svals[:, 0] > 0.0)
        & (svals[:, 14] > _RANK_GAP_RATIO * svals[:, 0])
        & (np.abs(dets) > 1e-12)
        & (dets > 0.0)
    )

    bh = np.hstack([bn, np.ones((n, 1))])
    proj = np.einsum("mij,nj->mni", models, bh)
    w = proj[:, :, 3]
    errs = np.full((iterations, n), np.inf)
    ok = np.abs(w) > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = proj[:, :, :3] / w[:, :, None] - an[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    errs[ok] = dist[ok]

    masks = errs < threshold
    counts = masks.sum(axis=1)
    err_sums = np.where(masks, errs, 0.0).sum(axis=1)

    best_count = 0
    best_err = np.inf
    best_mask = None
    for it in range(iterations):
        if not valid[it] or counts[it] < 5:
            continue
        if counts[it] > best_count or (
            counts[it] == best_count and err_sums[it] < best_err
        ):
            best_count = int(counts[it])
            best_err = float(err_sums[it])
            best_mask = masks[it]

    if best_mask is None:
        raise InsufficientInliers(
            f"no model with >= 5 inliers after {iterations} iterations"
        )

    try:
        h_norm = _nullspace_from_rows(rows_all[best_mask].reshape(-1, 16))
        polished = _finalize(np.linalg.inv(norm_a.t) @ h_norm @ norm_b.t)
    except DegenerateSample:
        # The all-inlier refit can degenerate even when minimal samples did
        # not; fall back to the best minimal model rather than failing.
        polished = _finalize(
            np.linalg.inv(norm_a.t)
            @ _nullspace_from_rows(rows_all[best_mask][:5].reshape(-1, 16))
            @ norm_b.t
        )
    mask = best_mask.copy()
    mask.setflags(write=False)
    return RansacResult(polished, mask, best_count, iterations)


def estimate_sim3(
    shared_src: np.ndarray,
    shared_dst: np.ndarray,
    rel_pose_hint: Sim3Transform | None = None,
) -> Sim3Transform:
    """Similarity alignment of a shared frame's two point sets.

    With a relative-pose hint the rotation and translation are taken from
    the hint and only the scale is estimated, as the median over points of
    the ratio of centered norms ||dst_i - mean(dst)|| / ||src_i - mean(src)||.
    Without a hint a full least-squares similarity fit is used.

    Raises:
        DegenerateConfiguration: fewer than 3 points, or collinear points on
            the full-fit path.
        ZeroScale: the median centered-norm ratio underflowed.
    """
    src = np.atleast_2d(np.asarray(shared_src, dtype=float))
    dst = np.atleast_2d(np.asarray(shared_dst, dtype=float))
    if src.shape != dst.shape or src.shape[1] != 3:
        raise ValueError("point arrays must both be (n, 3)")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    if rel_pose_hint is None:
        return umeyama_align(src, dst, with_scale=True)
    src_norms = np.linalg.norm(src - src.mean(axis=0), axis=1)
    dst_norms = np.linalg.norm(dst - dst.mean(axis=0), axis=1)
    usable = src_norms > 1e-12
    if not np.any(usable):
        raise ZeroScale("all source points coincide with their centroid")
    scale = float(np.median(dst_norms[usable] / src_norms[usable]))
    if not np.isfinite(scale) or scale <= 1e-12:
        raise ZeroScale(f"median scale ratio {scale!r} underflowed")
    return Sim3Transform(scale, rel_pose_hint.rotation, rel_pose_hint.translation)
