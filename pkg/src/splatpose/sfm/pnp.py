"""Absolute camera pose from 2D-3D correspondences.

The minimal solver is the classical three-point resection: with depths
s_i along the bearing rays, the pairwise distances between the three world
points give three law-of-cosines equations. Substituting s2 = u*s1 and
s3 = v*s1 eliminates the scale, u is linear in v, and back-substitution
leaves a quartic in v. Each admissible root yields camera-frame points whose
rigid alignment to the world points (Kabsch) is the candidate pose.
"""
from __future__ import annotations

import numpy as np

from ..geometry import CameraIntrinsics, CameraPose, project_points, projection_jacobians
from .errors import DegenerateGeometryError, InsufficientDataError, RansacFailureError

MIN_CORRESPONDENCES = 4
RANSAC_CONFIDENCE = 0.999
REAL_ROOT_TOL = 1e-8
COLLINEAR_RATIO = 1e-9


def absolute_orientation(world: np.ndarray, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (R, t) minimizing ||cam - (R @ world + t)||^2 over all rows."""
    world = np.atleast_2d(np.asarray(world, dtype=float))
    cam = np.atleast_2d(np.asarray(cam, dtype=float))
    cw = world.mean(axis=0)
    cc = cam.mean(axis=0)
    h = (world - cw).T @ (cam - cc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cc - r @ cw
    return r, t


def solve_p3p(world: np.ndarray, rays: np.ndarray) -> list[CameraPose]:
    """Candidate poses for three world points seen along unit bearing rays.

    Returns up to four poses; the caller disambiguates with extra points.
    Degenerate triangles (collinear world points, coincident rays) return an
    empty list rather than raising, so a sampling loop can just move on.
    """
    world = np.asarray(world, dtype=float).reshape(3, 3)
    rays = np.asarray(rays, dtype=float).reshape(3, 3)

    a = np.linalg.norm(world[1] - world[2])
    b = np.linalg.norm(world[0] - world[2])
    c = np.linalg.norm(world[0] - world[1])
    if min(a, b, c) < 1e-12:
        return []
    cos_alpha = float(rays[1] @ rays[2])
    cos_beta = float(rays[0] @ rays[2])
    cos_gamma = float(rays[0] @ rays[1])

    big_a = float((a / b) ** 2)
    big_b = float((c / b) ** 2)
    poly = np.polynomial.Polynomial
    # q(v) = 1 + v^2 - 2 v cos(beta) multiplies s1^2 in the middle equation
    q = poly([1.0, -2.0 * cos_beta, 1.0])
    # u as a rational function of v: numerator quadratic, denominator linear
    num = (big_a - big_b) * q + poly([1.0, 0.0, -1.0])
    den = poly([2.0 * cos_gamma, -2.0 * cos_alpha])
    if np.allclose(den.coef, 0.0):
        return []
    # substitute u = num/den into 1 + u^2 - 2 u cos(gamma) = B q(v), times den^2
    quartic = den * den + num * num - 2.0 * cos_gamma * num * den - big_b * q * den * den

    poses: list[CameraPose] = []
    for root in quartic.roots():
        if abs(root.imag) > REAL_ROOT_TOL * (1.0 + abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0.0:
            continue
        den_v = den(v)
        if abs(den_v) < 1e-12:
            continue
        u = num(v) / den_v
        if u <= 0.0:
            continue
        s1_sq = b * b / q(v)
        if s1_sq <= 0.0:
            continue
        s1 = float(np.sqrt(s1_sq))
        depths = np.array([s1, u * s1, v * s1])
        cam_points = depths[:, None] * rays
        r, t = absolute_orientation(world, cam_points)
        poses.append(CameraPose.from_rt(r, t))
    return poses


def _bearing_rays(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    h = np.column_stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(len(pixels)),
        ]
    )
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def _reprojection_errors(
    points: np.ndarray, pixels: np.ndarray, pose: CameraPose, intr: CameraIntrinsics
) -> np.ndarray:
    proj, _, valid = project_points(points, pose, intr)
    err = np.full(len(points), np.inf)
    err[valid] = np.linalg.norm(proj[valid] - pixels[valid], axis=1)
    return err


def refine_pose_reprojection(
    points: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    pose: CameraPose,
    iterations: int = 10,
) -> CameraPose:
    """Gauss-Newton on pixel reprojection error over the 6 pose parameters.

    Steps that fail to reduce the cost are halved a few times, then the loop
    stops; the returned pose never has higher cost than the input.
    """
    current = pose.copy()

    def cost_of(p: CameraPose) -> float:
        proj, _, valid = project_points(points, p, intr)
        if not valid.all():
            return np.inf
        return float(np.sum((proj - pixels) ** 2))

    cost = cost_of(current)
    if not np.isfinite(cost):
        return current
    for _ in range(iterations):
        proj, _, _ = project_points(points, current, intr)
        residuals = (proj - pixels).reshape(-1)
        jac = projection_jacobians(points, current, intr).reshape(-1, 6)
        step, *_ = np.linalg.lstsq(jac, -residuals, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        improved = False
        for _ in range(6):
            cand = CameraPose(
                current.angles + scale * step[:3], current.translation + scale * step[3:]
            )
            cand_cost = cost_of(cand)
            if cand_cost < cost:
                current = cand
                cost = cand_cost
                improved = True
                break
            scale *= 0.5
        if not improved or np.linalg.norm(scale * step) < 1e-14:
            break
    return current


def solve_pnp_ransac(
    points3d: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    iterations: int = 2048,
    threshold: float = 1.5,
    seed: int = 0,
) -> tuple[CameraPose, np.ndarray]:
    """Robust absolute pose; returns the refined pose and its inlier mask."""
    points3d = np.atleast_2d(np.asarray(points3d, dtype=float))
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    n = len(points3d)
    if n != len(pixels):
        raise ValueError("points and pixels must have equal length")
    if n < MIN_CORRESPONDENCES:
        raise InsufficientDataError(
            f"pose solve needs >= {MIN_CORRESPONDENCES} correspondences, got {n}"
        )
    spread = np.linalg.svd(points3d - points3d.mean(axis=0), compute_uv=False)
    if spread[1] < COLLINEAR_RATIO * spread[0]:
        raise DegenerateGeometryError("3d points are collinear; pose is not unique")

    rays = _bearing_rays(pixels, intr)
    rng = np.random.default_rng(seed)
    best_pose = None
    best_mask = None
    best_count = 0
    needed = float(iterations)
    it = 0
    while it < iterations and it < needed:
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        for cand in solve_p3p(points3d[idx], rays[idx]):
            mask = _reprojection_errors(points3d, pixels, cand, intr) < threshold
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_mask = mask
                best_pose = cand
                hit = (count / n) ** 3
                if hit >= 1.0:
                    needed = 0.0
                else:
                    needed = np.log(1.0 - RANSAC_CONFIDENCE) / np.log(1.0 - hit)

    if best_pose is None or best_count < MIN_CORRESPONDENCES:
        raise RansacFailureError(
            f"no pose reached {MIN_CORRESPONDENCES} inliers over {n} correspondences"
        )
    refined = refine_pose_reprojection(
        points3d[best_mask], pixels[best_mask], intr, best_pose
    )
    mask = _reprojection_errors(points3d, pixels, refined, intr) < threshold
    if int(mask.sum()) < MIN_CORRESPONDENCES:
        raise RansacFailureError("consensus collapsed after refinement")
    return refined, mask
