"""Absolute pose from 2D-3D correspondences: P3P minimal solve plus RANSAC."""
import numpy as np
import pytest

from helpers import small_intrinsics
from splatpose.geometry import CameraPose, euler_to_rotation, project_points
from splatpose.sfm.errors import (
    DegenerateGeometryError,
    InsufficientDataError,
    RansacFailureError,
)
from splatpose.sfm.pnp import absolute_orientation, solve_p3p, solve_pnp_ransac


def _pose_errors(est, ref):
    r_err = np.arccos(np.clip((np.trace(est.rotation @ ref.rotation.T) - 1) / 2, -1, 1))
    t_err = np.linalg.norm(est.translation - ref.translation)
    return r_err, t_err


def _scene(seed, n=50, angles=(0.2, -0.3, 0.1), t=(0.3, -0.2, 0.5)):
    rng = np.random.default_rng(seed)
    intr = small_intrinsics(size=64, focal=70.0)
    pose = CameraPose(np.asarray(angles, dtype=float), np.asarray(t, dtype=float))
    points = np.column_stack(
        [rng.uniform(-2, 2, size=n), rng.uniform(-2, 2, size=n), rng.uniform(4, 8, size=n)]
    )
    pixels, _, valid = project_points(points, pose, intr)
    assert valid.all()
    return points, pixels, pose, intr


def test_absolute_orientation_recovers_exact_transform():
    rng = np.random.default_rng(0)
    r = euler_to_rotation(np.array([0.3, -0.7, 1.1]))
    t = np.array([0.4, -1.2, 2.0])
    world = rng.normal(size=(10, 3))
    cam = world @ r.T + t
    r_est, t_est = absolute_orientation(world, cam)
    assert np.abs(r_est - r).max() < 1e-12
    assert np.abs(t_est - t).max() < 1e-12


def test_p3p_candidates_include_true_pose():
    points, pixels, pose, intr = _scene(1, n=3)
    rays = np.column_stack(
        [(pixels[:, 0] - intr.cx) / intr.fx, (pixels[:, 1] - intr.cy) / intr.fy, np.ones(3)]
    )
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    candidates = solve_p3p(points, rays)
    assert candidates
    best = min(max(_pose_errors(c, pose)) for c in candidates)
    assert best < 1e-8


def test_pnp_exact_correspondences():
    points, pixels, pose, intr = _scene(2)
    est, mask = solve_pnp_ransac(points, pixels, intr, iterations=256, threshold=1.5, seed=0)
    r_err, t_err = _pose_errors(est, pose)
    assert r_err < 1e-5
    assert t_err < 1e-5
    assert mask.all()


def test_pnp_with_quarter_outliers():
    points, pixels, pose, intr = _scene(3)
    rng = np.random.default_rng(4)
    bad = rng.choice(len(points), size=len(points) // 4, replace=False)
    noisy = pixels.copy()
    noisy[bad] = rng.uniform(0, 63, size=(len(bad), 2))
    est, mask = solve_pnp_ransac(points, noisy, intr, iterations=1024, threshold=1.5, seed=5)
    r_err, t_err = _pose_errors(est, pose)
    assert r_err < 1e-3
    assert t_err < 1e-3
    assert not mask[bad].any()


def test_pnp_needs_four_points():
    points, pixels, _, intr = _scene(6, n=4)
    with pytest.raises(InsufficientDataError):
        solve_pnp_ransac(points[:3], pixels[:3], intr)


def test_pnp_collinear_points_degenerate():
    intr = small_intrinsics(size=64, focal=70.0)
    pose = CameraPose(np.array([0.1, 0.2, -0.1]), np.array([0.0, 0.0, 0.3]))
    s = np.linspace(-1.0, 1.0, 20)
    points = np.column_stack([s, 0.5 * s, 5.0 + 0.2 * s])
    pixels, _, valid = project_points(points, pose, intr)
    assert valid.all()
    with pytest.raises(DegenerateGeometryError):
        solve_pnp_ransac(points, pixels, intr, iterations=64, seed=1)


def test_pnp_scrambled_data_has_no_consensus():
    points, pixels, _, intr = _scene(7, n=16)
    rng = np.random.default_rng(8)
    scrambled = rng.uniform(0, 63, size=pixels.shape)
    with pytest.raises(RansacFailureError):
        solve_pnp_ransac(points, scrambled, intr, iterations=64, threshold=0.5, seed=2)
