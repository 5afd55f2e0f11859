"""Joint refinement of camera poses and sparse points.

Levenberg-Marquardt on Huber-robustified reprojection error. The reference
pose stays out of the parameter vector entirely, and the overall scale (flat
direction of the cost) is restored after optimization by rescaling all
translations and points so the second camera keeps its incoming baseline
norm; that rescaling leaves every reprojection bit-for-bit meaningful since
pixel coordinates are invariant to a joint scaling of points and translations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from ..geometry import (
    CameraIntrinsics,
    CameraPose,
    perspective_jacobian,
    projection_jacobians,
    transform_points,
)
from .errors import BundleFailureError, InsufficientDataError
from .model import SfmReconstruction

HUBER_SCALE_PX = 2.0
LAMBDA_INIT = 1e-6
LAMBDA_GROW = 10.0
LAMBDA_SHRINK = 0.5
LAMBDA_MAX = 1e10
MAX_ESCALATIONS = 8


def _collect_observations(recon: SfmReconstruction):
    """Flatten tracks into parallel arrays, skipping unregistered images."""
    obs_point = []
    obs_image = []
    obs_pix = []
    for m, track in enumerate(recon.tracks):
        for image, kp in track:
            if image not in recon.poses:
                continue
            obs_point.append(m)
            obs_image.append(image)
            obs_pix.append(recon.pixels[image][kp])
    return (
        np.asarray(obs_point, dtype=np.int64),
        np.asarray(obs_image, dtype=np.int64),
        np.asarray(obs_pix, dtype=float).reshape(-1, 2),
    )


def _residuals(poses, points, intr, obs_point, obs_image, obs_pix, by_image):
    """(O, 2) reprojection residuals; None when any depth is non-positive."""
    r = np.empty((len(obs_point), 2))
    for image, sel in by_image.items():
        pose = poses[image]
        pts = points[obs_point[sel]]
        pc = transform_points(pts, pose)
        if np.any(pc[:, 2] <= 1e-9):
            return None
        proj = np.empty((len(pts), 2))
        proj[:, 0] = intr.fx * pc[:, 0] / pc[:, 2] + intr.cx
        proj[:, 1] = intr.fy * pc[:, 1] / pc[:, 2] + intr.cy
        r[sel] = proj - obs_pix[sel]
    return r


def _huber_cost_and_weights(r: np.ndarray) -> tuple[float, np.ndarray]:
    e = np.linalg.norm(r, axis=1)
    small = e <= HUBER_SCALE_PX
    rho = np.where(small, e**2, HUBER_SCALE_PX * (2.0 * e - HUBER_SCALE_PX))
    w = np.where(small, 1.0, HUBER_SCALE_PX / np.maximum(e, 1e-12))
    return float(rho.sum()), w


def mean_reprojection_error(recon: SfmReconstruction, intr: CameraIntrinsics) -> float:
    """Mean unweighted pixel error over all registered observations."""
    obs_point, obs_image, obs_pix = _collect_observations(recon)
    by_image = {i: np.flatnonzero(obs_image == i) for i in np.unique(obs_image)}
    r = _residuals(recon.poses, recon.points, intr, obs_point, obs_image, obs_pix, by_image)
    if r is None:
        return float("inf")
    return float(np.linalg.norm(r, axis=1).mean())


def bundle_adjust(
    recon: SfmReconstruction,
    intr: CameraIntrinsics,
    max_iterations: int = 50,
    trace: list | None = None,
) -> SfmReconstruction:
    """Minimize robust reprojection error over non-reference poses and points.

    Args:
        recon: reconstruction to refine (left untouched; a copy is returned).
        intr: shared pinhole intrinsics.
        max_iterations: cap on accepted LM steps.
        trace: optional list collecting the robust cost after each accepted
            step (the incoming cost is appended first).

    Raises:
        InsufficientDataError: fewer than two registered views or no
            observations.
        BundleFailureError: normal equations stayed unsolvable after damping
            escalation.
    """
    out = recon.copy()
    if len(out.poses) < 2:
        raise InsufficientDataError("bundle adjustment needs at least two registered views")
    obs_point, obs_image, obs_pix = _collect_observations(out)
    if len(obs_point) == 0:
        raise InsufficientDataError("bundle adjustment needs observations")
    by_image = {i: np.flatnonzero(obs_image == i) for i in np.unique(obs_image)}

    opt_images = [i for i in out.registered if i != out.reference]
    pose_offset = {image: 6 * k for k, image in enumerate(opt_images)}
    base = 6 * len(opt_images)
    n_params = base + 3 * out.n_points
    second = opt_images[0]
    scale_in = float(np.linalg.norm(out.poses[second].translation))

    def build_system(poses, points, r, w):
        sw = np.sqrt(w)
        jac = np.zeros((2 * len(obs_point), n_params))
        rw = np.empty(2 * len(obs_point))
        for image, sel in by_image.items():
            pose = poses[image]
            pts = points[obs_point[sel]]
            s = sw[sel]
            r0 = 2 * sel
            rw[r0] = r[sel, 0] * s
            rw[r0 + 1] = r[sel, 1] * s
            pc = transform_points(pts, pose)
            jp = perspective_jacobian(pc, intr)
            j_point = np.einsum("nij,jk->nik", jp, pose.rotation) * s[:, None, None]
            cols = base + 3 * obs_point[sel]
            col_idx = cols[:, None] + np.arange(3)[None, :]
            jac[r0[:, None], col_idx] = j_point[:, 0, :]
            jac[(r0 + 1)[:, None], col_idx] = j_point[:, 1, :]
            if image == out.reference:
                continue
            j_pose = projection_jacobians(pts, pose, intr) * s[:, None, None]
            c0 = pose_offset[image]
            jac[r0, c0 : c0 + 6] = j_pose[:, 0, :]
            jac[r0 + 1, c0 : c0 + 6] = j_pose[:, 1, :]
        return jac, rw

    def apply_delta(poses, points, delta):
        new_poses = {i: p.copy() for i, p in poses.items()}
        for image in opt_images:
            off = pose_offset[image]
            new_poses[image].angles -= delta[off : off + 3]
            new_poses[image].translation -= delta[off + 3 : off + 6]
        new_points = points - delta[base:].reshape(-1, 3)
        return new_poses, new_points

    poses = out.poses
    points = out.points
    r = _residuals(poses, points, intr, obs_point, obs_image, obs_pix, by_image)
    if r is None:
        raise BundleFailureError("initial reconstruction has non-positive depths")
    cost, w = _huber_cost_and_weights(r)
    if trace is not None:
        trace.append(cost)

    lam = LAMBDA_INIT
    for _ in range(max_iterations):
        jac, rw = build_system(poses, points, r, w)
        h = jac.T @ jac
        g = jac.T @ rw
        diag = np.diag(h).copy()
        diag[diag <= 0.0] = 1.0

        delta = None
        for _ in range(MAX_ESCALATIONS + 1):
            try:
                factor = scipy.linalg.cho_factor(h + lam * np.diag(diag), lower=True)
                cand = scipy.linalg.cho_solve(factor, g)
            except scipy.linalg.LinAlgError:
                lam *= LAMBDA_GROW
                continue
            if not np.all(np.isfinite(cand)):
                lam *= LAMBDA_GROW
                continue
            delta = cand
            break
        if delta is None:
            raise BundleFailureError(
                f"normal equations unsolvable after {MAX_ESCALATIONS} damping "
                f"escalations (lambda={lam:.3e}, {n_params} parameters, "
                f"{len(obs_point)} observations)"
            )

        accepted = False
        while True:
            cand_poses, cand_points = apply_delta(poses, points, delta)
            cand_r = _residuals(
                cand_poses, cand_points, intr, obs_point, obs_image, obs_pix, by_image
            )
            if cand_r is not None:
                cand_cost, cand_w = _huber_cost_and_weights(cand_r)
                if cand_cost <= cost:
                    poses, points, r = cand_poses, cand_points, cand_r
                    cost, w = cand_cost, cand_w
                    lam = max(lam * LAMBDA_SHRINK, 1e-12)
                    accepted = True
                    if trace is not None:
                        trace.append(cost)
                    break
            lam *= LAMBDA_GROW
            if lam > LAMBDA_MAX:
                break
            try:
                factor = scipy.linalg.cho_factor(h + lam * np.diag(diag), lower=True)
                delta = scipy.linalg.cho_solve(factor, g)
            except scipy.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(delta)):
                break
        if not accepted or np.linalg.norm(delta) < 1e-12:
            break

    # restore the scale gauge; a joint scaling of translations and points is
    # reprojection-invariant so the cost trace is unaffected
    norm_now = float(np.linalg.norm(poses[second].translation))
    if norm_now > 1e-12 and scale_in > 0.0:
        s = scale_in / norm_now
        for image in opt_images:
            poses[image].translation *= s
        points = points * s

    out.poses = poses
    out.points = points
    return out
