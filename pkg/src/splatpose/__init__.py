"""Joint 3D Gaussian scene and camera pose recovery from unposed images.

The package is organized as a library: geometry and rendering primitives at
the bottom, a photometric pose refiner and an alternating trainer above them,
a from-scratch multi-view initializer, and a thin pipeline/CLI layer on top.

The names most callers need are re-exported here; everything else stays
importable from its home module.
"""

from .cloud import GaussianCloud
from .geometry import CameraIntrinsics, CameraPose
from .metrics import compute_ate, compute_psnr, compute_rpe, compute_ssim
from .pose_refine import RefineConfig, RefineResult, refine_pose
from .renderer import render, render_backward
from .sfm import run_initialization, seed_gaussians
from .synthetic import SyntheticSceneSpec, generate_synthetic_scene
from .training import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "GaussianCloud",
    "RefineConfig",
    "RefineResult",
    "SyntheticSceneSpec",
    "TrainConfig",
    "TrainState",
    "compute_ate",
    "compute_psnr",
    "compute_rpe",
    "compute_ssim",
    "generate_synthetic_scene",
    "refine_pose",
    "render",
    "render_backward",
    "run_initialization",
    "seed_gaussians",
    "train",
]
