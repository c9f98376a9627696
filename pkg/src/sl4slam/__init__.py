"""Submap-alignment SLAM backend on the 15-DOF projective manifold.

Point-cloud submaps produced by uncalibrated reconstruction differ from one
another by full projective transforms, not just similarities. This package
estimates those 4x4 unit-determinant transforms from duplicated-frame
correspondences (robust 5-point fitting), fuses them in a factor graph
optimized directly on the projective manifold, detects loop closures by
descriptor retrieval, and evaluates the result against a synthetic
ground-truth oracle.
"""

from .errors import Sl4SlamError
from .evaluation import AteReport, ReconReport, ate_rmse, match_trajectories, recon_metrics
from .factor_graph import (
    BetweenFactor,
    FactorGraph,
    LmConfig,
    OptimizationReport,
    PriorFactor,
    linearize,
    optimize_lm,
    residual,
    total_cost,
)
from .lie_groups import (
    Homography,
    Sim3Transform,
    adjoint,
    exp_sl4,
    generators,
    hat,
    log_sl4,
    umeyama_align,
    vee,
)
from .oracle import OracleReconstructor, Scene, WarpModel, ground_truth, make_scene, reconstruct
from .pipeline import (
    Frame,
    GlobalMap,
    PipelineConfig,
    Reconstructor,
    RunReport,
    Submap,
    run_session,
)
from .projective import (
    Correspondence,
    RansacResult,
    build_constraint_rows,
    estimate_sim3,
    ransac_homography,
    solve_dlt,
    transfer_error,
)

__version__ = "0.1.0"

__all__ = [
    "Sl4SlamError",
    "AteReport", "ReconReport", "ate_rmse", "match_trajectories", "recon_metrics",
    "BetweenFactor", "FactorGraph", "LmConfig", "OptimizationReport", "PriorFactor",
    "linearize", "optimize_lm", "residual", "total_cost",
    "Homography", "Sim3Transform", "adjoint", "exp_sl4", "generators", "hat",
    "log_sl4", "umeyama_align", "vee",
    "OracleReconstructor", "Scene", "WarpModel", "ground_truth", "make_scene",
    "reconstruct",
    "Frame", "GlobalMap", "PipelineConfig", "Reconstructor", "RunReport",
    "Submap", "run_session",
    "Correspondence", "RansacResult", "build_constraint_rows", "estimate_sim3",
    "ransac_homography", "solve_dlt", "transfer_error",
]
