"""File-format round-trips: PLY, TUM, key-value, submap dumps, sessions."""

import numpy as np
import pytest

from sl4slam import oracle as oc
from sl4slam import session_io as sio
from sl4slam.errors import SessionFormatError
from sl4slam.pipeline import PipelineConfig, run_session


class TestPly:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((50, 3))
        colors = rng.integers(0, 256, size=(50, 3), dtype=np.uint8)
        path = tmp_path / "cloud.ply"
        sio.write_ply(path, pts, colors)
        back_pts, back_colors = sio.read_ply(path)
        np.testing.assert_allclose(back_pts, pts, atol=1e-6)
        np.testing.assert_array_equal(back_colors, colors)

    def test_header_is_binary_little_endian(self, tmp_path):
        path = tmp_path / "cloud.ply"
        sio.write_ply(path, np.zeros((3, 3)))
        raw = path.read_bytes()
        assert raw.startswith(b"ply\nformat binary_little_endian 1.0\n")
        assert b"property float x" in raw
        assert b"property uchar red" in raw

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"not a ply")
        with pytest.raises(SessionFormatError):
            sio.read_ply(path)


class TestTum:
    def test_roundtrip_within_tolerance(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = []
        for fid in range(20):
            rot = sio.quaternion_to_rotation(_random_quat(rng))
            rows.append((float(fid), rng.uniform(-5, 5, 3),
                         sio.rotation_to_quaternion(rot)))
        path = tmp_path / "traj.txt"
        sio.write_tum(path, rows)
        back = sio.read_tum(path)
        assert len(back) == 20
        for (ts, xyz, quat), (bts, bxyz, bquat) in zip(rows, back):
            assert bts == ts
            np.testing.assert_allclose(bxyz, xyz, atol=1e-9)
            np.testing.assert_allclose(bquat, quat, atol=1e-9)

    def test_quaternion_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            rot = sio.quaternion_to_rotation(_random_quat(rng))
            quat = sio.rotation_to_quaternion(rot)
            np.testing.assert_allclose(sio.quaternion_to_rotation(quat), rot,
                                       atol=1e-12)
            assert quat[3] >= 0.0

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("1.0 2.0 3.0\n")
        with pytest.raises(SessionFormatError):
            sio.read_tum(path)


class TestKeyValues:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "kv.txt"
        sio.write_keyvalues(path, {"alpha": 1, "beta": 0.25, "mode": "sl4"})
        back = sio.read_keyvalues(path)
        assert back == {"alpha": "1", "beta": "0.25", "mode": "sl4"}

    def test_sorted_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        sio.write_keyvalues(p1, {"b": 2, "a": 1})
        sio.write_keyvalues(p2, {"a": 1, "b": 2})
        assert p1.read_bytes() == p2.read_bytes()


class TestFramesFile:
    def test_roundtrip(self, tmp_path):
        scene = oc.make_scene(seed=3, n_points=200, n_frames=8, layout="room")
        frames = oc.synthesize_frames(scene, descriptor_dim=16)
        path = tmp_path / "frames.txt"
        sio.write_frames(path, frames)
        back = sio.read_frames(path)
        assert len(back) == len(frames)
        for f, b in zip(frames, back):
            assert b.frame_id == f.frame_id
            np.testing.assert_allclose(b.disparity, f.disparity, rtol=1e-15)
            np.testing.assert_allclose(b.descriptor, f.descriptor, rtol=1e-15)


class TestSubmapDump:
    def test_roundtrip_at_float32(self, tmp_path):
        scene = oc.make_scene(seed=4, n_points=300, n_frames=8, layout="room")
        submap = oc.reconstruct(scene, [1, 2, 3], oc.WarpModel("sl4", 0.2), seed=7)
        path = tmp_path / "submap_0000.bin"
        sio.write_submap(path, submap)
        back = sio.read_submap(path)
        assert back.frame_ids() == submap.frame_ids()
        for e1, e2 in zip(submap.frames, back.frames):
            np.testing.assert_allclose(e2.camera, e1.camera, atol=1e-6)
            np.testing.assert_allclose(e2.points, e1.points, atol=1e-5)
            np.testing.assert_allclose(e2.confidences, e1.confidences, atol=1e-6)

    def test_directory_reconstructor_validates_requests(self, tmp_path):
        scene = oc.make_scene(seed=5, n_points=300, n_frames=8, layout="room")
        submap = oc.reconstruct(scene, [0, 1], oc.WarpModel("identity"), seed=0)
        sub_dir = tmp_path / "submaps"
        sub_dir.mkdir()
        sio.write_submap(sub_dir / "submap_0000.bin", submap)
        recon = sio.DirectoryReconstructor(sub_dir)
        got = recon.reconstruct([0, 1])
        assert got.frame_ids() == [0, 1]
        with pytest.raises(SessionFormatError):
            sio.DirectoryReconstructor(sub_dir).reconstruct([3, 4])


class TestSession:
    def test_write_and_load_oracle_session(self, tmp_path):
        scene = oc.make_scene(seed=6, n_points=300, n_frames=16, layout="room")
        frames = oc.synthesize_frames(scene)
        warp = oc.WarpModel("sl4", 0.2, 0.001, 0.0)
        sio.write_session(tmp_path / "sess", scene, frames, warp, oracle_seed=6)
        manifest, back_frames, make_recon = sio.load_session(tmp_path / "sess")
        assert manifest["layout"] == "room"
        assert len(back_frames) == 16
        submap = make_recon().reconstruct([0, 1, 2])
        assert submap.frame_ids() == [0, 1, 2]
        positions, cloud = sio.load_ground_truth(tmp_path / "sess")
        assert len(positions) == 16
        assert len(cloud) > 0

    def test_dumped_session_matches_oracle_session(self, tmp_path):
        # The pre-serialized path must drive the pipeline to the same map
        # (up to float32 dump precision).
        scene = oc.make_scene(seed=7, n_points=400, n_frames=16, layout="room")
        frames = oc.synthesize_frames(scene)
        warp = oc.WarpModel("identity", 0.0, 0.0, 0.0)
        sio.write_session(tmp_path / "live", scene, frames, warp, oracle_seed=7)
        sio.write_session(tmp_path / "dump", scene, frames, warp, oracle_seed=7,
                          dump_submaps=True, dump_window=8)
        config = PipelineConfig(window_size=8, seed=0, ransac_iterations=40)

        _, fr1, mk1 = sio.load_session(tmp_path / "live")
        _, fr2, mk2 = sio.load_session(tmp_path / "dump")
        g1, _ = run_session(fr1, mk1(), config)
        g2, _ = run_session(fr2, mk2(), config)
        assert len(g1.points) == len(g2.points)
        np.testing.assert_allclose(g1.points, g2.points, atol=1e-4)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SessionFormatError):
            sio.load_session(tmp_path)


def _random_quat(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q
