"""Synthetic reconstruction oracle.

Fabricates ground-truth scenes and trajectories, then serves per-submap
reconstructions the way a feed-forward reconstructor would: points and
cameras expressed in the first requested camera's frame, distorted by a
random per-call warp (the per-submap ambiguity), with configurable point
noise, gross outliers, and confidences correlated with outlier status.
Ground truth stays available for scoring.

Every random quantity flows from (seed, call index); there is no hidden
entropy, so identical requests reproduce identical submaps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lie_groups import SIM3_GROUP, exp_sl4, transform_points
from .pipeline import Frame, FrameEntry, Submap

LAYOUTS = ("room", "corridor_loop", "planar_floor")
WARP_KINDS = ("identity", "sim3", "sl4")

_MIN_VISIBLE = 50


@dataclass(frozen=True)
class WarpModel:
    """Per-submap reconstruction distortion model."""

    kind: str = "identity"
    magnitude: float = 0.0
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in WARP_KINDS:
            raise ValueError(f"unknown warp kind {self.kind!r}")
        if self.magnitude < 0.0:
            raise ValueError("magnitude must be nonnegative")
        if self.kind == "sl4" and self.magnitude > 1.0:
            raise ValueError("sl4 warp magnitude above 1 leaves the principal log domain")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class Scene:
    """Ground truth: world points, rigid camera poses, per-frame visibility."""

    seed: int
    layout: str
    points: np.ndarray            # (n, 3) world frame
    cameras: np.ndarray           # (f, 4, 4) camera-to-world rigid poses
    visibility: np.ndarray        # (f, n) bool
    diameter: float = 0.0
    trajectory_length: float = 0.0

    def __post_init__(self):
        counts = self.visibility.sum(axis=1)
        if counts.min() < _MIN_VISIBLE:
            raise ValueError(
                f"frame {int(counts.argmin())} sees only {int(counts.min())} points"
            )

    @property
    def n_frames(self) -> int:
        return len(self.cameras)


def _look_at(position: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Rigid camera-to-world pose looking from position toward target."""
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        forward = np.array([1.0, 0.0, 0.0])
    else:
        forward = forward / norm
    upv = np.asarray(up, dtype=float)
    right = np.cross(forward, upv)
    if np.linalg.norm(right) < 1e-6:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = position
    return pose


def _frustum_visibility(points, cameras, fov_deg=100.0, near=0.05, far=8.0):
    """Per-frame masks, padded to the minimum count with nearest points."""
    half_tan = np.tan(np.radians(fov_deg) / 2.0)
    n_frames = len(cameras)
    vis = np.zeros((n_frames, len(points)), dtype=bool)
    ph = np.hstack([points, np.ones((len(points), 1))])
    for f in range(n_frames):
        local = ph @ np.linalg.inv(cameras[f]).T
        depth = local[:, 2]
        in_front = depth > near
        with np.errstate(divide="ignore", invalid="ignore"):
            lat_ok = (
                (np.abs(local[:, 0]) <= depth * half_tan)
                & (np.abs(local[:, 1]) <= depth * half_tan)
            )
        mask = in_front & lat_ok & (depth <= far)
        if mask.sum() < _MIN_VISIBLE:
            dist = np.linalg.norm(points - cameras[f][:3, 3], axis=1)
            order = np.argsort(dist, kind="stable")
            mask = mask.copy()
            for idx in order:
                if mask.sum() >= _MIN_VISIBLE:
                    break
                mask[idx] = True
        vis[f] = mask
    return vis


def _scene_meta(points, cameras):
    lo, hi = points.min(axis=0), points.max(axis=0)
    diameter = float(np.linalg.norm(hi - lo))
    centers = cameras[:, :3, 3]
    length = float(np.linalg.norm(np.diff(centers, axis=0), axis=1).sum())
    return diameter, length


def make_scene(seed: int, n_points: int, n_frames: int, layout: str = "room") -> Scene:
    """Deterministic ground-truth scene for one of the fixed layouts.

    `corridor_loop` revisits its start (the last camera ends within a few
    percent of the trajectory length from the first), `planar_floor` puts
    every point exactly on one plane, `room` is a general box interior.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    if n_points < 100:
        raise ValueError("need at least 100 points")
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.default_rng(seed)

    if layout == "room":
        size = np.array([5.0, 5.0, 2.5])
        points = rng.uniform(0.0, 1.0, size=(n_points, 3)) * size
        center = size / 2.0
        angles = np.linspace(0.0, 2.0 * np.pi, n_frames, endpoint=False)
        cameras = np.stack([
            _look_at(
                center + np.array([1.2 * np.cos(a), 1.2 * np.sin(a), 0.1 * np.sin(2 * a)]),
                center + np.array([3.0 * np.cos(a + 0.35), 3.0 * np.sin(a + 0.35), 0.0]),
            )
            for a in angles
        ])
    elif layout == "corridor_loop":
        radius = 4.0
        width = 1.6
        wall_angles = rng.uniform(0.0, 2.0 * np.pi, size=n_points)
        wall_side = np.where(rng.uniform(size=n_points) < 0.5, -1.0, 1.0)
        wall_r = radius + wall_side * width / 2.0
        heights = rng.uniform(0.0, 2.4, size=n_points)
        points = np.stack([
            wall_r * np.cos(wall_angles),
            wall_r * np.sin(wall_angles),
            heights,
        ], axis=1)
        # Two circuits: every place is revisited, so loop closures fire
        # throughout the second pass, and the last camera still ends next
        # to the first.
        gap = 0.01
        angles = np.linspace(0.0, 4.0 * np.pi * (1.0 - gap), n_frames)
        cameras = np.stack([
            _look_at(
                np.array([radius * np.cos(a), radius * np.sin(a), 1.4]),
                np.array([
                    radius * np.cos(a + 0.5),
                    radius * np.sin(a + 0.5),
                    1.3,
                ]),
            )
            for a in angles
        ])
    else:  # planar_floor
        extent = 6.0
        points = np.zeros((n_points, 3))
        points[:, :2] = rng.uniform(0.0, extent, size=(n_points, 2))
        xs = np.linspace(0.8, extent - 0.8, n_frames)
        cameras = np.stack([
            _look_at(
                np.array([x, extent / 2.0 + 0.4 * np.sin(x), 1.6]),
                np.array([x + 0.6, extent / 2.0 + 0.4 * np.sin(x + 0.6), 0.0]),
            )
            for x in xs
        ])

    visibility = _frustum_visibility(points, cameras)
    diameter, length = _scene_meta(points, cameras)
    return Scene(
        seed=seed, layout=layout, points=points, cameras=cameras,
        visibility=visibility, diameter=diameter, trajectory_length=length,
    )


def _draw_warp(warp: WarpModel, rng: np.random.Generator) -> np.ndarray:
    if warp.kind == "identity" or warp.magnitude == 0.0:
        return np.eye(4)
    if warp.kind == "sim3":
        xi = rng.uniform(-1.0, 1.0, size=7)
        xi *= warp.magnitude / max(np.linalg.norm(xi), 1e-12)
        return SIM3_GROUP.exp(xi)
    xi = rng.uniform(-1.0, 1.0, size=15)
    xi *= warp.magnitude / max(np.linalg.norm(xi), 1e-12)
    return exp_sl4(xi).m


def reconstruct(
    scene: Scene, frame_ids: list[int], warp: WarpModel, seed: int
) -> Submap:
    """One submap: anchor-frame geometry under a fresh random warp.

    Points and cameras are expressed in the first requested camera's frame,
    then distorted together by one warp drawn from (seed): the submap stays
    internally consistent while differing from ground truth by its own
    ambiguity. Gaussian noise is added to points, a fraction of points is
    replaced by uniform gross outliers, and confidences are near 1 for
    clean points and near 0.05 for injected outliers.
    """
    for fid in frame_ids:
        if not 0 <= fid < scene.n_frames:
            raise ValueError(f"frame {fid} not in scene with {scene.n_frames} frames")
    rng = np.random.default_rng(seed)
    warp_matrix = _draw_warp(warp, rng)
    anchor_inv = np.linalg.inv(scene.cameras[frame_ids[0]])

    entries = []
    for fid in frame_ids:
        mask = scene.visibility[fid]
        world = scene.points[mask]
        local = transform_points(anchor_inv, world)
        warped = transform_points(warp_matrix, local)
        n = len(warped)
        if warp.noise_sigma > 0.0:
            warped = warped + rng.normal(0.0, warp.noise_sigma, size=(n, 3))
        confidences = np.clip(rng.normal(1.0, 0.05, size=n), 0.2, None)
        if warp.outlier_fraction > 0.0:
            n_out = int(round(warp.outlier_fraction * n))
            if n_out:
                chosen = rng.choice(n, size=n_out, replace=False)
                lo = warped.min(axis=0)
                hi = warped.max(axis=0)
                span = np.maximum(hi - lo, 1e-3)
                warped[chosen] = rng.uniform(
                    lo - 0.25 * span, hi + 0.25 * span, size=(n_out, 3)
                )
                confidences[chosen] = np.clip(
                    rng.normal(0.05, 0.01, size=n_out), 0.005, None
                )
        camera = warp_matrix @ anchor_inv @ scene.cameras[fid]
        entries.append(FrameEntry(fid, camera, warped, confidences))
    return Submap(submap_id=-1, frames=entries)


def ground_truth(scene: Scene, frame_ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free world-frame poses and the union visible cloud."""
    for fid in frame_ids:
        if not 0 <= fid < scene.n_frames:
            raise ValueError(f"frame {fid} not in scene with {scene.n_frames} frames")
    poses = scene.cameras[list(frame_ids)].copy()
    union = np.zeros(scene.points.shape[0], dtype=bool)
    for fid in frame_ids:
        union |= scene.visibility[fid]
    return poses, scene.points[union].copy()


def synthesize_frames(scene: Scene, descriptor_dim: int = 32) -> list[Frame]:
    """Frame stream with disparity scalars and place-recognition descriptors.

    Disparities are proportional to the camera baseline (median step maps to
    50), so the default gate keeps most frames. Descriptors are L2-normalized
    random Fourier features of camera position, seeded by the scene, so
    revisited places score high cosine similarity.
    """
    rng = np.random.default_rng(scene.seed + 987654321)
    centers = scene.cameras[:, :3, 3]
    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    median_step = float(np.median(steps)) if len(steps) else 1.0
    scale = 50.0 / max(median_step, 1e-12)
    disparities = np.concatenate([[0.0], steps * scale])

    length_scale = max(scene.diameter / 7.0, 1e-6)
    proj = rng.normal(0.0, 1.0 / length_scale, size=(descriptor_dim, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=descriptor_dim)
    feats = np.cos(centers @ proj.T + phase)
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)

    return [
        Frame(frame_id=f, disparity=float(disparities[f]), descriptor=feats[f])
        for f in range(scene.n_frames)
    ]


@dataclass
class OracleReconstructor:
    """Reconstructor seam backed by a scene.

    The first call is served without a warp: the opening reconstruction
    defines the session's reference frame, so its ambiguity would be an
    unobservable global gauge that only obscures metric evaluation.
    Subsequent calls draw a fresh warp from (seed, call index).
    """

    scene: Scene
    warp: WarpModel
    seed: int
    identity_first: bool = True
    calls: int = field(default=0, init=False)

    def reconstruct(self, frame_ids: list[int]) -> Submap:
        call_index = self.calls
        self.calls += 1
        warp = self.warp
        if self.identity_first and call_index == 0:
            warp = WarpModel(
                "identity", 0.0, self.warp.noise_sigma, self.warp.outlier_fraction
            )
        call_seed = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(call_index,)
        ).generate_state(1)[0]
        return reconstruct(self.scene, frame_ids, warp, int(call_seed))


def serialize_session(session_dir, scene: Scene, frames, warp: WarpModel,
                      oracle_seed: int, **kwargs) -> None:
    """Write a generated session in the pipeline's on-disk schema.

    Convenience re-export: the resulting directory is consumed by the
    command-line `run` exactly like an externally produced one.
    """
    from .session_io import write_session

    write_session(session_dir, scene, frames, warp, oracle_seed, **kwargs)
