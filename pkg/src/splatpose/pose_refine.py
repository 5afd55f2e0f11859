"""Photometric pose refinement by damped Gauss-Newton.

Treats the gaussian cloud as a bank of 3D template pixels: each sufficiently
visible gaussian contributes the RGB residual between its base color and the
image sampled at its projected center. One refinement iteration is

  1. project gaussian centers with the current pose
  2. residual rows   l_g = c(g) - I(warp(x_g; P))
  3. steepest rows   d_g = grad I(warp(x_g; P)) * d warp / d P
  4. normal system   H = sum d_g^T d_g ,  b = sum d_g^T l_g
  5. damped solve    (H + damping diag(H)) delta = b
  6. candidate       P + step_scale * delta, kept only if the cost drops

Occlusion is handled by gating on renderer visibility (max blend weight from
a forward pass at the entry pose); in-view validity is re-checked every
iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cloud import GaussianCloud
from .geometry import CameraIntrinsics, CameraPose, canonicalize_angles, projection_jacobians, project_points
from .image import image_gradients, sample_bilinear_many


@dataclass
class RefineConfig:
    step_scale: float = 1.0
    max_iterations: int = 20
    tolerance: float = 1e-6
    damping: float = 1e-4
    visibility_threshold: float = 0.05


@dataclass
class PhotometricResidual:
    gaussian_index: int
    residual: np.ndarray  # (3,)
    steepest: np.ndarray  # (3, 6)
    weight: float


@dataclass
class RefineResult:
    pose: CameraPose
    cost_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _sample_rows(positions, colors, pose, intr, image, grad_u, grad_v):
    """Residual and steepest-descent rows for a set of gaussian centers."""
    with np.errstate(all="ignore"):
        pix, depth, in_front = project_points(positions, pose, intr)
        safe_pix = np.where(np.isfinite(pix), pix, -1.0)
        sampled, in_bounds = sample_bilinear_many(image, safe_pix)
        ok = in_front & in_bounds
        l = colors - sampled
        gu, _ = sample_bilinear_many(grad_u, safe_pix)
        gv, _ = sample_bilinear_many(grad_v, safe_pix)
        jac = projection_jacobians(positions, pose, intr)
    jac[~in_front] = 0.0
    d = gu[:, :, None] * jac[:, None, 0, :] + gv[:, :, None] * jac[:, None, 1, :]
    l[~ok] = 0.0
    d[~ok] = 0.0
    return l, d, ok


def _cost(positions, colors, pose, intr, image):
    with np.errstate(all="ignore"):
        pix, _, in_front = project_points(positions, pose, intr)
        safe_pix = np.where(np.isfinite(pix), pix, -1.0)
        sampled, in_bounds = sample_bilinear_many(image, safe_pix)
    ok = in_front & in_bounds
    resid = colors[ok] - sampled[ok]
    return float(np.sum(resid * resid)), int(ok.sum())


def build_residuals(
    cloud: GaussianCloud,
    pose: CameraPose,
    intr: CameraIntrinsics,
    image: np.ndarray,
    visibility: np.ndarray | None = None,
    threshold: float = 0.05,
):
    """Per-gaussian photometric residuals at one pose.

    Gaussians below the visibility threshold, behind the camera, or projecting
    outside the image keep weight 0. Returns a list of PhotometricResidual.
    """
    if visibility is None:
        from .renderer import render

        visibility = render(cloud, pose, intr).visibility
    img = np.asarray(image, dtype=float)
    grad_u, grad_v = image_gradients(img)
    l, d, ok = _sample_rows(cloud.positions, cloud.colors, pose, intr, img, grad_u, grad_v)
    gated = np.asarray(visibility) >= threshold
    out = []
    for i in range(len(cloud)):
        w = 1.0 if (gated[i] and ok[i]) else 0.0
        out.append(PhotometricResidual(i, l[i], d[i], w))
    return out


def assemble_normal_equations(residuals):
    """Weighted Gauss-Newton normal equations from residual rows."""
    h = np.zeros((6, 6))
    b = np.zeros(6)
    for r in residuals:
        if r.weight == 0.0:
            continue
        h += r.weight * (r.steepest.T @ r.steepest)
        b += r.weight * (r.steepest.T @ r.residual)
    return h, b


def solve_increment(h: np.ndarray, b: np.ndarray, damping: float, max_escalations: int = 8):
    """Solve (H + damping diag(H)) delta = b, raising damping while the
    system is not positive definite; falls back to a least-squares solve.

    Returns:
        (delta, damping actually used).
    """
    for _ in range(max_escalations + 1):
        m = h + damping * np.diag(np.diag(h))
        try:
            c, low = scipy.linalg.cho_factor(m)
            delta = scipy.linalg.cho_solve((c, low), b)
            if np.all(np.isfinite(delta)):
                return delta, damping
        except scipy.linalg.LinAlgError:
            pass
        damping *= 10.0
    delta = np.linalg.lstsq(h + damping * np.diag(np.diag(h)), b, rcond=None)[0]
    return delta, damping


def refine_pose(
    cloud: GaussianCloud,
    pose: CameraPose,
    intr: CameraIntrinsics,
    image: np.ndarray,
    config: RefineConfig = RefineConfig(),
    visibility: np.ndarray | None = None,
) -> RefineResult:
    """Iteratively align one pose to one image against the frozen cloud.

    The cost trace holds the summed squared residual at the entry pose and
    after every accepted step; rejected steps only raise the damping.
    """
    if visibility is None:
        from .renderer import render

        visibility = render(cloud, pose, intr).visibility
    gate = np.asarray(visibility) >= config.visibility_threshold
    img = np.asarray(image, dtype=float)

    positions = cloud.positions[gate]
    colors = cloud.colors[gate]
    result = RefineResult(pose=pose.copy())
    if 3 * len(positions) < 6:
        cost0, _ = _cost(positions, colors, result.pose, intr, img)
        result.cost_trace = [cost0]
        return result

    grad_u, grad_v = image_gradients(img)
    cost_cur, n_cur = _cost(positions, colors, result.pose, intr, img)
    result.cost_trace = [cost_cur]
    damping = config.damping

    for it in range(1, config.max_iterations + 1):
        result.iterations = it
        l, d, ok = _sample_rows(positions, colors, result.pose, intr, img, grad_u, grad_v)
        if 3 * int(ok.sum()) < 6:
            break
        h = np.einsum("nck,ncl->kl", d, d)
        b = np.einsum("nck,nc->k", d, l)
        delta, damping = solve_increment(h, b, damping)
        step = config.step_scale * delta
        candidate = CameraPose(result.pose.angles + step[:3], result.pose.translation + step[3:])
        cost_new, n_new = _cost(positions, colors, candidate, intr, img)
        # dropping rows out of view must not masquerade as progress
        if n_new >= n_cur and cost_new <= cost_cur:
            result.pose = candidate
            cost_cur, n_cur = cost_new, n_new
            result.cost_trace.append(cost_cur)
            damping = max(damping * 0.5, 1e-12)
            if float(np.linalg.norm(step)) < config.tolerance:
                result.converged = True
                break
        else:
            damping = min(damping * 10.0, 1e8)

    result.pose = CameraPose(canonicalize_angles(result.pose.angles), result.pose.translation)
    return result


def refine_all_poses(cloud, poses, intr, images, config: RefineConfig = RefineConfig()):
    """Refine every pose against its own image; the cloud stays frozen."""
    return [refine_pose(cloud, p, intr, img, config) for p, img in zip(poses, images)]
