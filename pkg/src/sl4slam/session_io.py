"""On-disk formats: PLY clouds, TUM trajectories, sessions, submap dumps.

A session directory is the pipeline's input contract:

    manifest.txt       key=value text (scene and generation parameters)
    frames.txt         one line per frame: frame_id disparity d0 ... dD-1
    gt_trajectory.txt  TUM lines for every frame (ground truth)
    gt_points.ply      ground-truth cloud, world frame
    submaps/           optional pre-serialized reconstructions; when absent
                       the manifest parameters rebuild the synthetic scene

Submap dumps use a little-endian binary schema: per frame the camera as 16
float32 values row-major, points as flat float32 triples, confidences as
float32. Oracle sessions and externally dumped reconstructions are read
through the same code path.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import SessionFormatError
from .pipeline import Frame, FrameEntry, Submap

_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uchar red\n"
    "property uchar green\n"
    "property uchar blue\n"
    "end_header\n"
)

_VERTEX_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
     ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)

_SUBMAP_MAGIC = b"SMAP"


def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """Binary little-endian PLY with float32 xyz and uchar rgb."""
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    if colors is None:
        colors = np.full((len(points), 3), 200, dtype=np.uint8)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if len(colors) != len(points):
        raise ValueError("points and colors must have equal length")
    data = np.empty(len(points), dtype=_VERTEX_DTYPE)
    data["x"], data["y"], data["z"] = points[:, 0], points[:, 1], points[:, 2]
    data["red"], data["green"], data["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(n=len(points)).encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a PLY written by :func:`write_ply`; returns (points, colors)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"end_header\n"
    pos = raw.find(marker)
    if not raw.startswith(b"ply\n") or pos < 0:
        raise SessionFormatError(f"{path}: not a PLY file")
    header = raw[:pos].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise SessionFormatError(f"{path}: unsupported PLY format")
    n = None
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    if n is None:
        raise SessionFormatError(f"{path}: missing vertex element")
    body = raw[pos + len(marker):]
    data = np.frombuffer(body, dtype=_VERTEX_DTYPE, count=n)
    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return points, colors


def submap_color(submap_id: int) -> np.ndarray:
    """Deterministic provenance color per submap (golden-angle hue)."""
    hue = (0.61803398875 * (submap_id + 1)) % 1.0
    i = int(hue * 6.0)
    f = hue * 6.0 - i
    v, s = 0.95, 0.65
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i % 6]
    return (np.array(rgb) * 255).astype(np.uint8)


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Hamilton quaternion (qx, qy, qz, qw) with canonical qw >= 0."""
    m = np.asarray(rot, dtype=float)
    tr = np.trace(m)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    q /= np.linalg.norm(q)
    if q[3] < 0.0:
        q = -q
    return q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    qx, qy, qz, qw = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
        [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
        [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)],
    ])


def write_tum(path, rows: list[tuple[float, np.ndarray, np.ndarray]]) -> None:
    """TUM trajectory lines: timestamp tx ty tz qx qy qz qw."""
    with open(path, "w") as fh:
        for ts, xyz, quat in rows:
            fields = [f"{ts:.6f}"]
            fields += [f"{v:.9f}" for v in xyz]
            fields += [f"{v:.9f}" for v in quat]
            fh.write(" ".join(fields) + "\n")


def read_tum(path) -> list[tuple[float, np.ndarray, np.ndarray]]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise SessionFormatError(f"{path}: malformed TUM line {line!r}")
            vals = [float(p) for p in parts]
            rows.append((vals[0], np.array(vals[1:4]), np.array(vals[4:8])))
    return rows


def write_keyvalues(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(entries):
            value = entries[key]
            if isinstance(value, float):
                fh.write(f"{key}={value:.17g}\n")
            else:
                fh.write(f"{key}={value}\n")


def read_keyvalues(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SessionFormatError(f"{path}: malformed line {line!r}")
            key, value = line.split("=", 1)
            out[key] = value
    return out


def write_frames(path, frames: list[Frame]) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            fields = [str(frame.frame_id), f"{frame.disparity:.17g}"]
            fields += [f"{v:.17g}" for v in frame.descriptor]
            fh.write(" ".join(fields) + "\n")


def read_frames(path) -> list[Frame]:
    frames = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise SessionFormatError(f"{path}: malformed frame line {line!r}")
            frames.append(
                Frame(
                    frame_id=int(parts[0]),
                    disparity=float(parts[1]),
                    descriptor=np.array([float(p) for p in parts[2:]]),
                )
            )
    return frames


def write_submap(path, submap: Submap) -> None:
    """Binary dump: cameras as 16 float32 row-major, float32 points/confidences."""
    with open(path, "wb") as fh:
        fh.write(_SUBMAP_MAGIC)
        fh.write(struct.pack("<II", 1, len(submap.frames)))
        for entry in submap.frames:
            pts = np.asarray(entry.points, dtype="<f4")
            conf = np.asarray(entry.confidences, dtype="<f4")
            cam = np.asarray(entry.camera, dtype="<f4").reshape(16)
            fh.write(struct.pack("<qI", entry.frame_id, len(pts)))
            fh.write(cam.tobytes())
            fh.write(pts.tobytes())
            fh.write(conf.tobytes())


def read_submap(path) -> Submap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _SUBMAP_MAGIC:
        raise SessionFormatError(f"{path}: bad magic")
    version, n_frames = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise SessionFormatError(f"{path}: unsupported version {version}")
    offset = 12
    entries = []
    for _ in range(n_frames):
        frame_id, n_pts = struct.unpack_from("<qI", raw, offset)
        offset += 12
        cam = np.frombuffer(raw, dtype="<f4", count=16, offset=offset)
        offset += 64
        pts = np.frombuffer(raw, dtype="<f4", count=3 * n_pts, offset=offset)
        offset += 12 * n_pts
        conf = np.frombuffer(raw, dtype="<f4", count=n_pts, offset=offset)
        offset += 4 * n_pts
        entries.append(
            FrameEntry(
                frame_id=int(frame_id),
                camera=cam.astype(np.float64).reshape(4, 4),
                points=pts.astype(np.float64).reshape(-1, 3),
                confidences=conf.astype(np.float64),
            )
        )
    return Submap(submap_id=-1, frames=entries)


class DirectoryReconstructor:
    """Serves pre-serialized submaps in call order, validating frame ids."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.paths = sorted(self.directory.glob("submap_*.bin"))
        if not self.paths:
            raise SessionFormatError(f"{directory}: no submap dumps")
        self.calls = 0

    def reconstruct(self, frame_ids: list[int]) -> Submap:
        if self.calls >= len(self.paths):
            raise SessionFormatError(
                f"reconstruction request #{self.calls} but only "
                f"{len(self.paths)} dumps available"
            )
        submap = read_submap(self.paths[self.calls])
        self.calls += 1
        stored = submap.frame_ids()
        if stored != list(frame_ids):
            raise SessionFormatError(
                f"dump {self.paths[self.calls - 1].name} holds frames {stored}, "
                f"pipeline requested {list(frame_ids)}"
            )
        return submap


# ---------------------------------------------------------------------------
# Session directories.


def write_session(
    session_dir,
    scene,
    frames: list[Frame],
    warp,
    oracle_seed: int,
    identity_first: bool = True,
    dump_submaps: bool = False,
    dump_window: int | None = None,
) -> None:
    """Serialize an oracle scene into the pipeline's session schema.

    With `dump_submaps` the reconstructions a run with window `dump_window`
    would request are also pre-serialized, which exercises the same on-disk
    path that externally produced dumps use.
    """
    from . import oracle as oc

    session_dir = Path(session_dir)
    session_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "kind": "oracle",
        "layout": scene.layout,
        "scene_seed": scene.seed,
        "n_points": len(scene.points),
        "n_frames": scene.n_frames,
        "descriptor_dim": len(frames[0].descriptor) if frames else 0,
        "warp_kind": warp.kind,
        "warp_magnitude": warp.magnitude,
        "noise_sigma": warp.noise_sigma,
        "outlier_fraction": warp.outlier_fraction,
        "oracle_seed": oracle_seed,
        "identity_first_warp": int(identity_first),
        "scene_diameter": scene.diameter,
        "trajectory_length": scene.trajectory_length,
    }
    write_keyvalues(session_dir / "manifest.txt", manifest)
    write_frames(session_dir / "frames.txt", frames)

    poses, cloud = oc.ground_truth(scene, list(range(scene.n_frames)))
    rows = []
    for fid, pose in enumerate(poses):
        quat = rotation_to_quaternion(pose[:3, :3])
        rows.append((float(fid), pose[:3, 3], quat))
    write_tum(session_dir / "gt_trajectory.txt", rows)
    write_ply(session_dir / "gt_points.ply", cloud)

    if dump_submaps:
        if dump_window is None:
            raise ValueError("dump_submaps requires dump_window")
        _dump_submaps(session_dir, scene, frames, warp, oracle_seed,
                      identity_first, dump_window)


def _dump_submaps(session_dir, scene, frames, warp, oracle_seed,
                  identity_first, window):
    """Pre-serialize the requests a default-gated run with `window` makes."""
    from . import oracle as oc
    from .pipeline import PipelineConfig, SlamPipeline

    recon = oc.OracleReconstructor(scene, warp, oracle_seed, identity_first)
    requests: list[list[int]] = []

    class _Recorder:
        def reconstruct(self, frame_ids):
            requests.append(list(frame_ids))
            return recon.reconstruct(frame_ids)

    config = PipelineConfig(window_size=window, ransac_iterations=30)
    pipeline = SlamPipeline(_Recorder(), config)
    for frame in frames:
        pipeline.add_frame(frame)
    pipeline.finish()

    out = Path(session_dir) / "submaps"
    out.mkdir(exist_ok=True)
    replay = oc.OracleReconstructor(scene, warp, oracle_seed, identity_first)
    for k, request in enumerate(requests):
        write_submap(out / f"submap_{k:04d}.bin", replay.reconstruct(request))


def load_session(session_dir):
    """Load manifest + frames and build the reconstructor factory.

    Returns (manifest dict, frames, make_reconstructor), where
    make_reconstructor() yields a fresh reconstructor: pre-serialized dumps
    when a submaps/ directory exists, otherwise the synthetic scene rebuilt
    from the manifest.
    """
    from . import oracle as oc

    session_dir = Path(session_dir)
    manifest_path = session_dir / "manifest.txt"
    if not manifest_path.exists():
        raise SessionFormatError(f"{session_dir}: missing manifest.txt")
    manifest = read_keyvalues(manifest_path)
    frames = read_frames(session_dir / "frames.txt")

    submap_dir = session_dir / "submaps"
    if submap_dir.is_dir():
        def make_reconstructor():
            return DirectoryReconstructor(submap_dir)
    else:
        if manifest.get("kind") != "oracle":
            raise SessionFormatError(
                f"{session_dir}: no submap dumps and kind is not 'oracle'"
            )
        scene = oc.make_scene(
            seed=int(manifest["scene_seed"]),
            n_points=int(manifest["n_points"]),
            n_frames=int(manifest["n_frames"]),
            layout=manifest["layout"],
        )
        warp = oc.WarpModel(
            kind=manifest["warp_kind"],
            magnitude=float(manifest["warp_magnitude"]),
            noise_sigma=float(manifest["noise_sigma"]),
            outlier_fraction=float(manifest["outlier_fraction"]),
        )

        def make_reconstructor():
            return oc.OracleReconstructor(
                scene, warp, int(manifest["oracle_seed"]),
                bool(int(manifest.get("identity_first_warp", "1"))),
            )

    return manifest, frames, make_reconstructor


def load_ground_truth(session_dir):
    """(frame_id -> position, gt cloud) from a session directory."""
    session_dir = Path(session_dir)
    rows = read_tum(session_dir / "gt_trajectory.txt")
    positions = {int(round(ts)): xyz for ts, xyz, _ in rows}
    cloud, _ = read_ply(session_dir / "gt_points.ply")
    return positions, cloud
