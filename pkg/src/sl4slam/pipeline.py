"""End-to-end submap SLAM control flow.

A stream of frames (each carrying a precomputed disparity scalar and a
place-recognition descriptor) is gated into keyframes. Keyframes fill a
window of size w; each full window becomes a reconstruction request made of
an overlap frame duplicated from the previous submap, the new keyframes,
and up to w_loop retrieved loop-closure frames. The resulting submaps are
confidence-filtered, aligned pairwise through their duplicated frames
(full projective alignment, or the similarity baseline), fused into a
factor graph, and globally optimized into one map.

The reconstructor is a seam: anything that maps a list of frame ids to a
Submap expressed in the first requested camera's frame can drive the
pipeline (the synthetic oracle in this package, or dumps read from disk).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from . import factor_graph as fg
from .errors import (
    DisconnectedGraph,
    EmptySubmap,
    InsufficientInliers,
    NoSharedFrame,
    TooFewPoints,
)
from .lie_groups import (
    Homography,
    Sim3Transform,
    similarity_from_matrix,
)
from .projective import estimate_sim3, ransac_homography

ROLE_PRIOR = "prior_overlap"
ROLE_REGULAR = "regular"
ROLE_LOOP = "loop"


@dataclass(frozen=True)
class Frame:
    """One input frame: id, disparity vs. previous keyframe, descriptor."""

    frame_id: int
    disparity: float
    descriptor: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.disparity) or self.disparity < 0.0:
            raise ValueError(
                f"frame {self.frame_id}: disparity {self.disparity!r} invalid"
            )


@dataclass
class FrameEntry:
    """Per-frame reconstruction data inside a submap.

    `points` holds one entry per pixel-indexed sample of the frame; the
    i-th entry of two reconstructions of the same frame refers to the same
    physical surface point. Pruning never reorders: `valid` masks pruned
    entries so positions stay aligned across submaps.
    """

    frame_id: int
    camera: np.ndarray            # 4x4, camera-to-submap map
    points: np.ndarray            # (n, 3)
    confidences: np.ndarray       # (n,)
    valid: np.ndarray = None      # (n,) bool

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(len(self.points), dtype=bool)
        if not (len(self.points) == len(self.confidences) == len(self.valid)):
            raise ValueError("points, confidences, and valid must align")


@dataclass
class Submap:
    submap_id: int
    frames: list[FrameEntry]
    roles: dict[int, str] = field(default_factory=dict)

    def frame_ids(self) -> list[int]:
        return [entry.frame_id for entry in self.frames]

    def entry(self, frame_id: int) -> FrameEntry:
        for entry in self.frames:
            if entry.frame_id == frame_id:
                return entry
        raise NoSharedFrame(f"frame {frame_id} not in submap {self.submap_id}")

    def has_frame(self, frame_id: int) -> bool:
        return any(entry.frame_id == frame_id for entry in self.frames)

    def valid_point_count(self) -> int:
        return int(sum(entry.valid.sum() for entry in self.frames))


class Reconstructor(Protocol):
    def reconstruct(self, frame_ids: list[int]) -> Submap: ...


def gate_keyframe(frame: Frame, tau_disparity: float, *, is_first: bool = False) -> bool:
    """Keyframe test: first frame always, then strictly larger disparity."""
    if is_first:
        return True
    return frame.disparity > tau_disparity


def schedule_submap(
    keyframe_ids: list[int],
    prior_frame: int | None,
    loop_frames: list[int],
    w_loop: int = 1,
) -> tuple[list[int], dict[int, str]]:
    """Ordered reconstruction request: prior overlap, new keyframes, loops.

    Returns the frame-id list and the role tag of every requested frame.
    At most `w_loop` loop frames are appended.
    """
    if not keyframe_ids:
        raise ValueError("cannot schedule a submap with no keyframes")
    ids: list[int] = []
    roles: dict[int, str] = {}
    if prior_frame is not None:
        ids.append(prior_frame)
        roles[prior_frame] = ROLE_PRIOR
    for fid in keyframe_ids:
        ids.append(fid)
        roles[fid] = ROLE_REGULAR
    for fid in loop_frames[:w_loop]:
        if fid in roles:
            continue
        ids.append(fid)
        roles[fid] = ROLE_LOOP
    return ids, roles


def filter_confidence(submap: Submap, tau_conf_percent: float) -> Submap:
    """Invalidate points below tau_conf_percent of the mean confidence.

    The cutoff is (tau_conf_percent / 100) * mean over every confidence in
    the submap; comparison is strict, so tau 0 keeps everything.
    """
    all_conf = np.concatenate([e.confidences for e in submap.frames]) if submap.frames else np.array([])
    if all_conf.size == 0:
        raise EmptySubmap(f"submap {submap.submap_id} has no points")
    cutoff = (tau_conf_percent / 100.0) * float(all_conf.mean())
    new_frames = []
    remaining = 0
    for entry in submap.frames:
        keep = entry.valid & ~(entry.confidences < cutoff)
        remaining += int(keep.sum())
        new_frames.append(
            FrameEntry(entry.frame_id, entry.camera, entry.points,
                       entry.confidences, keep)
        )
    if remaining == 0:
        raise EmptySubmap(
            f"submap {submap.submap_id}: every point fell below the "
            f"confidence cutoff {cutoff:.4g}"
        )
    return Submap(submap.submap_id, new_frames, dict(submap.roles))


def shared_frame_correspondences(
    s_new: Submap, s_old: Submap, frame_id: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-index-zipped point pairs of a frame present in both submaps.

    Only entries valid in both submaps survive. Returned in (old, new)
    order, so an estimated transform maps new-submap coordinates into the
    old submap's frame.
    """
    if not s_new.has_frame(frame_id):
        raise NoSharedFrame(f"frame {frame_id} not in submap {s_new.submap_id}")
    if not s_old.has_frame(frame_id):
        raise NoSharedFrame(f"frame {frame_id} not in submap {s_old.submap_id}")
    e_new = s_new.entry(frame_id)
    e_old = s_old.entry(frame_id)
    if len(e_new.points) != len(e_old.points):
        raise NoSharedFrame(
            f"frame {frame_id} has {len(e_new.points)} points in submap "
            f"{s_new.submap_id} but {len(e_old.points)} in {s_old.submap_id}"
        )
    joint = e_new.valid & e_old.valid
    if int(joint.sum()) < 5:
        raise TooFewPoints(
            f"frame {frame_id}: only {int(joint.sum())} jointly valid points"
        )
    return e_old.points[joint], e_new.points[joint]


@dataclass(frozen=True)
class HistoryFrame:
    """A keyframe registered for retrieval, tagged with its home submap."""

    frame_id: int
    submap_id: int
    descriptor: np.ndarray


def retrieve_loop_candidates(
    current_keyframes: list[Frame],
    history: list[HistoryFrame],
    latest_submap_id: int,
    tau_desc: float,
    tau_interval: int,
    w_loop: int,
) -> list[tuple[int, int]]:
    """Best-matching old frames for the window about to become a submap.

    Only frames whose home submap index is at most latest - tau_interval are
    eligible. Similarity is the dot product of L2-normalized descriptors
    against every current keyframe (best match counts); candidates must
    exceed tau_desc. Returns up to w_loop (frame_id, submap_id) pairs,
    highest similarity first, ties broken by older frame id.
    """
    if not current_keyframes or not history or w_loop <= 0:
        return []
    current = np.stack([f.descriptor for f in current_keyframes]).astype(float)
    norms = np.linalg.norm(current, axis=1)
    norms[norms == 0.0] = 1.0
    current /= norms[:, None]
    scored = []
    for item in history:
        if item.submap_id > latest_submap_id - tau_interval:
            continue
        desc = np.asarray(item.descriptor, dtype=float)
        norm = np.linalg.norm(desc)
        if norm == 0.0:
            continue
        similarity = float(np.max(current @ (desc / norm)))
        if similarity > tau_desc:
            scored.append((-similarity, item.frame_id, item.submap_id))
    scored.sort()
    return [(fid, sid) for _, fid, sid in scored[:w_loop]]


@dataclass(frozen=True)
class CorrectedCamera:
    frame_id: int
    submap_id: int
    matrix: np.ndarray
    pose: Sim3Transform | None  # None when the camera stays projective


def correct_cameras(
    submap: Submap, h_abs: Homography, similarity_tolerance: float = 0.05
) -> list[CorrectedCamera]:
    """Compose every camera with the submap's absolute transform.

    Points move by X -> h_abs X, and each camera maps its own frame into the
    submap, so the corrected camera is h_abs composed with the stored one;
    camera-frame geometry is untouched. When the corrected matrix is
    numerically a similarity the pose is extracted, otherwise it is reported
    as a projective camera (pose None).
    """
    corrected = []
    for entry in submap.frames:
        matrix = h_abs.m @ entry.camera
        pose = similarity_from_matrix(matrix, tol=similarity_tolerance)
        corrected.append(CorrectedCamera(entry.frame_id, submap.submap_id, matrix, pose))
    return corrected


@dataclass
class GlobalMap:
    mode: str
    homographies: dict[int, Homography]
    points: np.ndarray           # (n, 3) fused cloud
    point_submaps: np.ndarray    # (n,) provenance submap id per point
    cameras: list[CorrectedCamera]
    optimization: fg.OptimizationReport
    dropped_points: int = 0      # points lost at the plane at infinity

    def trajectory(self) -> list[tuple[int, Sim3Transform]]:
        """(frame_id, pose) for every camera with a similarity pose."""
        return [(c.frame_id, c.pose) for c in self.cameras if c.pose is not None]


def _fuse_points(h_abs: Homography, points: np.ndarray) -> tuple[np.ndarray, int]:
    """Map points into the global frame, dropping any at infinity."""
    ph = np.hstack([points, np.ones((len(points), 1))])
    out = ph @ h_abs.m.T
    w = out[:, 3]
    keep = np.abs(w) > 1e-9
    fused = out[keep, :3] / w[keep, None]
    return fused, int(len(points) - keep.sum())


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "sl4"                 # "sl4" | "sim3"
    window_size: int = 8              # w: new keyframes per submap
    w_loop: int = 1
    tau_disparity: float = 25.0
    tau_conf_percent: float = 25.0
    tau_desc: float = 0.8
    tau_interval: int = 2
    ransac_iterations: int = 300
    ransac_threshold: float = 0.01
    seed: int = 0
    use_loop_closures: bool = True
    similarity_tolerance: float = 0.05
    lm: fg.LmConfig = field(default_factory=fg.LmConfig)

    def __post_init__(self):
        if self.mode not in ("sl4", "sim3"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.window_size < 1:
            raise ValueError("window_size must be at least 1")


@dataclass
class RunReport:
    n_frames: int = 0
    n_keyframes: int = 0
    submap_frames: list = field(default_factory=list)
    sequential_edges: list = field(default_factory=list)
    loop_edges: list = field(default_factory=list)
    skipped_loops: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    optimization: fg.OptimizationReport | None = None


def build_graph_and_solve(
    submaps: list[Submap],
    sequential_aligns: list[tuple[int, int, Homography]],
    loop_aligns: list[tuple[int, int, Homography]],
    mode: str = "sl4",
    lm_config: fg.LmConfig | None = None,
    similarity_tolerance: float = 0.05,
) -> tuple[GlobalMap, fg.OptimizationReport]:
    """Anchor submap 0, optimize all relative factors, fuse the map.

    Raises DisconnectedGraph when some submap cannot be reached from submap
    0 through the supplied alignments.
    """
    if not submaps:
        raise ValueError("no submaps to fuse")
    graph = fg.FactorGraph()
    for i, j, h in sequential_aligns + loop_aligns:
        graph.add_between(i, j, h)
    anchor_id = submaps[0].submap_id
    graph.add_prior(anchor_id, Homography.identity())
    if len(submaps) > 1:
        graph.check_connected(anchor_id)
        unreferenced = {s.submap_id for s in submaps} - set(graph.variable_ids())
        if unreferenced:
            raise DisconnectedGraph(
                f"submaps {sorted(unreferenced)} have no alignment factors"
            )

    init = {anchor_id: Homography.identity()}
    for i, j, h in sequential_aligns:
        if i in init and j not in init:
            init[j] = init[i] @ h
    for i, j, h in sequential_aligns + loop_aligns:
        if i in init and j not in init:
            init[j] = init[i] @ h
        elif j in init and i not in init:
            init[i] = init[j] @ h.inverse()

    values, report = fg.optimize_lm(graph, init, lm_config)

    clouds = []
    provenance = []
    cameras: list[CorrectedCamera] = []
    dropped = 0
    for submap in submaps:
        h_abs = values[submap.submap_id]
        local = [e.points[e.valid] for e in submap.frames]
        stacked = np.vstack(local) if local else np.zeros((0, 3))
        if len(stacked):
            fused, lost = _fuse_points(h_abs, stacked)
            dropped += lost
            clouds.append(fused)
            provenance.append(np.full(len(fused), submap.submap_id, dtype=np.int32))
        for cam in correct_cameras(submap, h_abs, similarity_tolerance):
            if submap.roles.get(cam.frame_id, ROLE_REGULAR) == ROLE_REGULAR:
                cameras.append(cam)
    cameras.sort(key=lambda c: c.frame_id)
    global_map = GlobalMap(
        mode=mode,
        homographies=values,
        points=np.vstack(clouds) if clouds else np.zeros((0, 3)),
        point_submaps=np.concatenate(provenance) if provenance else np.zeros(0, dtype=np.int32),
        cameras=cameras,
        optimization=report,
        dropped_points=dropped,
    )
    return global_map, report


def _normalized_camera(matrix: np.ndarray) -> np.ndarray:
    if abs(matrix[3, 3]) < 1e-9:
        raise InsufficientInliers("camera matrix has a vanishing scale entry")
    return matrix / matrix[3, 3]


def _nearest_rotation(block: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(block)
    rot = u @ vt
    if np.linalg.det(rot) < 0.0:
        rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return rot


def _sim3_relative(
    old_entry: FrameEntry, new_entry: FrameEntry, old_pts: np.ndarray, new_pts: np.ndarray
) -> Sim3Transform:
    """Baseline relative transform for a duplicated frame.

    Rotation comes from the two camera estimates, scale from the shared
    point sets (median of centered-norm ratios with that pose hint), and the
    translation makes the camera centers consistent under that scale.
    """
    cam_old = _normalized_camera(old_entry.camera)
    cam_new = _normalized_camera(new_entry.camera)
    rot_rel = _nearest_rotation(cam_old[:3, :3]) @ _nearest_rotation(cam_new[:3, :3]).T
    hint = Sim3Transform(1.0, rot_rel, np.zeros(3))
    scale = estimate_sim3(new_pts, old_pts, rel_pose_hint=hint).scale
    translation = cam_old[:3, 3] - scale * rot_rel @ cam_new[:3, 3]
    return Sim3Transform(scale, rot_rel, translation)


class SlamPipeline:
    """Sequential submap construction, alignment, and global fusion."""

    def __init__(self, reconstructor: Reconstructor, config: PipelineConfig):
        self.reconstructor = reconstructor
        self.config = config
        self.report = RunReport()
        self._buffer: list[Frame] = []
        self._first_seen = False
        self._last_frame_id: int | None = None
        self._prior_frame: int | None = None
        self._submaps: list[Submap] = []
        self._history: list[HistoryFrame] = []
        self._sequential: list[tuple[int, int, Homography]] = []
        self._loops: list[tuple[int, int, Homography]] = []
        self._seed_seq = np.random.SeedSequence(config.seed)

    def _next_seed(self) -> int:
        return int(self._seed_seq.spawn(1)[0].generate_state(1)[0])

    def add_frame(self, frame: Frame) -> None:
        if self._last_frame_id is not None and frame.frame_id <= self._last_frame_id:
            raise ValueError(
                f"frame ids must be strictly increasing: {frame.frame_id} "
                f"after {self._last_frame_id}"
            )
        self._last_frame_id = frame.frame_id
        self.report.n_frames += 1
        if gate_keyframe(frame, self.config.tau_disparity, is_first=not self._first_seen):
            self._first_seen = True
            self.report.n_keyframes += 1
            self._buffer.append(frame)
            if len(self._buffer) == self.config.window_size:
                self._emit_submap()

    def _emit_submap(self) -> None:
        cfg = self.config
        submap_id = len(self._submaps)
        keyframes = self._buffer
        self._buffer = []

        loop_pairs: list[tuple[int, int]] = []
        if cfg.use_loop_closures:
            loop_pairs = retrieve_loop_candidates(
                keyframes, self._history, submap_id,
                cfg.tau_desc, cfg.tau_interval, cfg.w_loop,
            )
        request, roles = schedule_submap(
            [f.frame_id for f in keyframes],
            self._prior_frame,
            [fid for fid, _ in loop_pairs],
            cfg.w_loop,
        )
        loop_sources = {fid: sid for fid, sid in loop_pairs if roles.get(fid) == ROLE_LOOP}

        submap = self.reconstructor.reconstruct(request)
        submap = dataclasses.replace(submap, submap_id=submap_id, roles=roles)
        submap = filter_confidence(submap, cfg.tau_conf_percent)
        self.report.submap_frames.append(list(request))

        if self._prior_frame is not None:
            prev = self._submaps[-1]
            h_rel = self._align(prev, submap, self._prior_frame)
            self._sequential.append((prev.submap_id, submap_id, h_rel))
            self.report.sequential_edges.append((prev.submap_id, submap_id))

        for fid, source_id in loop_sources.items():
            source = self._submaps[source_id]
            try:
                h_rel = self._align(source, submap, fid)
            except (TooFewPoints, InsufficientInliers, NoSharedFrame) as exc:
                self.report.skipped_loops.append((fid, source_id, str(exc)))
                continue
            self._loops.append((source_id, submap_id, h_rel))
            self.report.loop_edges.append((fid, source_id, submap_id))

        self._submaps.append(submap)
        for frame in keyframes:
            self._history.append(
                HistoryFrame(frame.frame_id, submap_id, frame.descriptor)
            )
        self._prior_frame = keyframes[-1].frame_id

    def _align(self, s_old: Submap, s_new: Submap, frame_id: int) -> Homography:
        old_pts, new_pts = shared_frame_correspondences(s_new, s_old, frame_id)
        if self.config.mode == "sim3":
            sim = _sim3_relative(
                s_old.entry(frame_id), s_new.entry(frame_id), old_pts, new_pts
            )
            return sim.to_homography()
        result = ransac_homography(
            old_pts, new_pts,
            iterations=self.config.ransac_iterations,
            threshold=self.config.ransac_threshold,
            seed=self._next_seed(),
        )
        return result.h

    def finish(self) -> GlobalMap:
        """Flush the partial window and run the global solve."""
        if self._buffer:
            self._emit_submap()
        if not self._submaps:
            raise EmptySubmap("no keyframes produced any submap")
        global_map, report = build_graph_and_solve(
            self._submaps, self._sequential, self._loops,
            mode=self.config.mode,
            lm_config=self.config.lm,
            similarity_tolerance=self.config.similarity_tolerance,
        )
        self.report.optimization = report
        return global_map

    @property
    def submaps(self) -> list[Submap]:
        return list(self._submaps)

    @property
    def sequential_aligns(self):
        return list(self._sequential)

    @property
    def loop_aligns(self):
        return list(self._loops)


def run_session(
    frames: Iterable[Frame],
    reconstructor: Reconstructor,
    config: PipelineConfig,
) -> tuple[GlobalMap, RunReport]:
    """Drive the full pipeline over a frame stream."""
    pipeline = SlamPipeline(reconstructor, config)
    for frame in frames:
        pipeline.add_frame(frame)
    global_map = pipeline.finish()
    return global_map, pipeline.report
