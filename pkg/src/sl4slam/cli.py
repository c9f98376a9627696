"""Command-line interface: session synthesis, runs, evaluation, export.

    sl4slam synth --out session/ --layout corridor_loop --seed 3
    sl4slam run session/ --mode sl4 --w 8 --out run/
    sl4slam eval --run run/ --session session/
    sl4slam export --run run/ --out copies/

Every run is deterministic for a fixed session and seed: byte-identical
map, trajectory, and report files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import oracle as oc
from . import session_io as sio
from .errors import Sl4SlamError
from .pipeline import PipelineConfig, run_session


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sl4slam",
        description="Submap-alignment SLAM backend with projective factors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic session directory")
    synth.add_argument("--out", required=True, help="session directory to create")
    synth.add_argument("--layout", default="room", choices=oc.LAYOUTS)
    synth.add_argument("--n-points", type=int, default=600)
    synth.add_argument("--n-frames", type=int, default=48)
    synth.add_argument("--seed", type=int, default=0, help="scene seed")
    synth.add_argument("--oracle-seed", type=int, default=None,
                       help="reconstruction noise seed (default: scene seed)")
    synth.add_argument("--warp", default="sl4", choices=oc.WARP_KINDS)
    synth.add_argument("--warp-magnitude", type=float, default=0.2)
    synth.add_argument("--noise-sigma", type=float, default=0.0)
    synth.add_argument("--outlier-fraction", type=float, default=0.0)
    synth.add_argument("--descriptor-dim", type=int, default=32)
    synth.add_argument("--warp-first-submap", action="store_true",
                       help="also warp the first reconstruction (default: the "
                            "first submap fixes the session's reference frame)")
    synth.add_argument("--dump-submaps", type=int, metavar="W", default=None,
                       help="pre-serialize the reconstructions a window-W run requests")

    run = sub.add_parser("run", help="run the pipeline on a session")
    run.add_argument("session", help="session directory")
    run.add_argument("--out", required=True, help="output directory")
    # Run parameters resolve as: explicit flag > manifest key > built-in
    # default (see RUN_DEFAULTS).
    run.add_argument("--mode", default=None, choices=("sl4", "sim3"))
    run.add_argument("--w", type=int, default=None, help="new keyframes per submap")
    run.add_argument("--w-loop", type=int, default=None)
    run.add_argument("--tau-disparity", type=float, default=None)
    run.add_argument("--tau-conf", type=float, default=None)
    run.add_argument("--tau-desc", type=float, default=None)
    run.add_argument("--tau-interval", type=int, default=None)
    run.add_argument("--ransac-iters", type=int, default=None)
    run.add_argument("--ransac-thresh", type=float, default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--no-loop-closure", action="store_true")

    evalp = sub.add_parser("eval", help="score a run against session ground truth")
    evalp.add_argument("--run", required=True, help="run output directory")
    evalp.add_argument("--session", required=True, help="session directory")
    evalp.add_argument("--out", default=None,
                       help="metrics file (default: RUN/metrics.txt)")
    evalp.add_argument("--align", default="sim3", choices=("sim3", "se3"))
    evalp.add_argument("--trim", type=float, default=None,
                       help="optional percentile cap on nearest-neighbor distances")

    export = sub.add_parser("export", help="re-emit a run's map and trajectory")
    export.add_argument("--run", required=True)
    export.add_argument("--out", required=True)
    return parser


def _cmd_synth(args) -> int:
    scene = oc.make_scene(args.seed, args.n_points, args.n_frames, args.layout)
    frames = oc.synthesize_frames(scene, args.descriptor_dim)
    warp = oc.WarpModel(args.warp, args.warp_magnitude, args.noise_sigma,
                        args.outlier_fraction)
    oracle_seed = args.seed if args.oracle_seed is None else args.oracle_seed
    sio.write_session(
        args.out, scene, frames, warp, oracle_seed,
        identity_first=not args.warp_first_submap,
        dump_submaps=args.dump_submaps is not None,
        dump_window=args.dump_submaps,
    )
    print(f"session written to {args.out} "
          f"({args.n_frames} frames, layout {args.layout})")
    return 0


RUN_DEFAULTS = {
    "mode": "sl4",
    "w": 8,
    "w_loop": 1,
    "tau_disparity": 25.0,
    "tau_conf": 25.0,
    "tau_desc": 0.8,
    "tau_interval": 2,
    "ransac_iters": 300,
    "ransac_thresh": 0.01,
}

_RUN_CASTS = {
    "mode": str, "w": int, "w_loop": int, "tau_disparity": float,
    "tau_conf": float, "tau_desc": float, "tau_interval": int,
    "ransac_iters": int, "ransac_thresh": float,
}


def resolve_run_parameters(args, manifest: dict) -> dict:
    """Explicit flag > manifest key > built-in default, per parameter."""
    resolved = {}
    for name, default in RUN_DEFAULTS.items():
        cli_value = getattr(args, name, None)
        if cli_value is not None:
            resolved[name] = cli_value
        elif name in manifest:
            resolved[name] = _RUN_CASTS[name](manifest[name])
        else:
            resolved[name] = default
    return resolved


def _cmd_run(args) -> int:
    manifest, frames, make_reconstructor = sio.load_session(args.session)
    params = resolve_run_parameters(args, manifest)
    config = PipelineConfig(
        mode=params["mode"],
        window_size=params["w"],
        w_loop=params["w_loop"],
        tau_disparity=params["tau_disparity"],
        tau_conf_percent=params["tau_conf"],
        tau_desc=params["tau_desc"],
        tau_interval=params["tau_interval"],
        ransac_iterations=params["ransac_iters"],
        ransac_threshold=params["ransac_thresh"],
        seed=args.seed,
        use_loop_closures=not args.no_loop_closure,
    )
    global_map, report = run_session(frames, make_reconstructor(), config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    colors = np.stack([sio.submap_color(s) for s in global_map.point_submaps]) \
        if len(global_map.point_submaps) else np.zeros((0, 3), dtype=np.uint8)
    sio.write_ply(out / "map.ply", global_map.points, colors)

    rows = []
    skipped = 0
    for cam in global_map.cameras:
        if cam.pose is None:
            skipped += 1
            continue
        quat = sio.rotation_to_quaternion(cam.pose.rotation)
        rows.append((float(cam.frame_id), cam.pose.translation, quat))
    sio.write_tum(out / "trajectory.txt", rows)
    if skipped:
        print(f"warning: {skipped} projective cameras omitted from the "
              f"trajectory (no similarity pose)", file=sys.stderr)

    opt = global_map.optimization
    sio.write_keyvalues(out / "run_report.txt", {
        "mode": config.mode,
        "w": config.window_size,
        "w_loop": config.w_loop,
        "seed": config.seed,
        "loop_closures_enabled": int(config.use_loop_closures),
        "n_frames": report.n_frames,
        "n_keyframes": report.n_keyframes,
        "n_submaps": len(report.submap_frames),
        "n_sequential_edges": len(report.sequential_edges),
        "n_loop_edges": len(report.loop_edges),
        "n_skipped_loops": len(report.skipped_loops),
        "n_projective_cameras": skipped,
        "n_dropped_points": global_map.dropped_points,
        "lm_iterations": opt.iterations,
        "lm_final_cost": opt.final_cost,
        "lm_status": opt.status,
    })
    print(f"run complete: {len(report.submap_frames)} submaps, "
          f"{len(report.loop_edges)} loop closures, "
          f"final cost {opt.final_cost:.3e}")
    return 0


def _cmd_eval(args) -> int:
    run_dir = Path(args.run)
    est_rows = sio.read_tum(run_dir / "trajectory.txt")
    est_positions = {int(round(ts)): xyz for ts, xyz, _ in est_rows}
    gt_positions, gt_cloud = sio.load_ground_truth(args.session)
    est_cloud, _ = sio.read_ply(run_dir / "map.ply")
    manifest = sio.read_keyvalues(Path(args.session) / "manifest.txt")

    metrics: dict = {
        "align": args.align,
        "trim": "none" if args.trim is None else args.trim,
        "est_points": len(est_cloud),
        "gt_points": len(gt_cloud),
        "est_poses": len(est_positions),
        "scene_diameter": float(manifest.get("scene_diameter", "nan")),
        "trajectory_length": float(manifest.get("trajectory_length", "nan")),
    }
    try:
        ids, est_xyz, gt_xyz = ev.match_trajectories(est_positions, gt_positions)
    except Sl4SlamError:
        ids = []
    metrics["matched_frames"] = len(ids)
    if len(ids) >= 3:
        report = ev.ate_rmse(est_xyz, gt_xyz, align=args.align)
        metrics["ate_rmse"] = report.rmse
        aligned_cloud = report.alignment.apply(est_cloud)
        recon = ev.recon_metrics(aligned_cloud, gt_cloud, trim_percentile=args.trim)
        metrics["accuracy"] = recon.accuracy
        metrics["completion"] = recon.completion
        metrics["chamfer"] = recon.chamfer
    else:
        print("warning: fewer than 3 matched frames; metrics unavailable",
              file=sys.stderr)
        metrics["ate_rmse"] = float("nan")
        metrics["accuracy"] = float("nan")
        metrics["completion"] = float("nan")
        metrics["chamfer"] = float("nan")

    out = Path(args.out) if args.out else run_dir / "metrics.txt"
    sio.write_keyvalues(out, metrics)
    print(f"ate_rmse={metrics['ate_rmse']:.6g} chamfer={metrics['chamfer']:.6g} "
          f"({len(ids)} matched frames)")
    return 0


def _cmd_export(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points, colors = sio.read_ply(run_dir / "map.ply")
    sio.write_ply(out / "map.ply", points, colors)
    rows = sio.read_tum(run_dir / "trajectory.txt")
    sio.write_tum(out / "trajectory.txt", rows)
    print(f"re-emitted {len(points)} points and {len(rows)} poses to {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "run": _cmd_run,
        "eval": _cmd_eval,
        "export": _cmd_export,
    }
    try:
        return handlers[args.command](args)
    except Sl4SlamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
