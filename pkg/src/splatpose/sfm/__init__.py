"""Sparse reconstruction: features, two-view geometry, resection, bundle."""
from .bundle import bundle_adjust, mean_reprojection_error
from .errors import (
    BundleFailureError,
    CheiralityError,
    DegenerateGeometryError,
    InitializationError,
    InsufficientDataError,
    LowParallaxError,
    RansacFailureError,
    SfmError,
)
from .features import Keypoint, detect_features
from .matching import MatchPair, match_features
from .model import SfmReconstruction
from .pnp import solve_pnp_ransac
from .reconstruction import build_tracks, run_initialization, seed_gaussians
from .triangulation import triangulate
from .two_view import estimate_essential_ransac, recover_pose

__all__ = [
    "BundleFailureError",
    "CheiralityError",
    "DegenerateGeometryError",
    "InitializationError",
    "InsufficientDataError",
    "Keypoint",
    "LowParallaxError",
    "MatchPair",
    "RansacFailureError",
    "SfmError",
    "SfmReconstruction",
    "build_tracks",
    "bundle_adjust",
    "detect_features",
    "estimate_essential_ransac",
    "match_features",
    "mean_reprojection_error",
    "recover_pose",
    "run_initialization",
    "seed_gaussians",
    "solve_pnp_ransac",
    "triangulate",
]
