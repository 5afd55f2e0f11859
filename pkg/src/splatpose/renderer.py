"""Differentiable CPU splat renderer.

Forward: EWA-project each 3D Gaussian to a 2D mean/covariance, then blend
front-to-back with per-pixel transmittance over a black background. Backward:
exact reverse-mode gradients for every Gaussian parameter given an upstream
image gradient. The per-pixel loops are JIT-compiled; all surrounding algebra
is vectorized numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cloud import GaussianCloud, quaternions_to_matrices, sigmoid
from .geometry import DEPTH_EPS, CameraIntrinsics, CameraPose, perspective_jacobian

# low-pass dilation added to both 2D covariance eigenvalues (in pixel^2)
COV2D_DILATION = 0.3
# squared Mahalanobis cutoff: contributions beyond 3 sigma are dropped
TRUNCATION_Q = 9.0
# cap on a single blend contribution so 1/(1 - a) stays finite in backward
ALPHA_CLAMP = 0.9999
_A_MIN = 1e-12


@dataclass
class ProjectedGaussians:
    """Per-gaussian screen-space quantities for one camera."""

    mean2d: np.ndarray      # (N, 2) pixel coordinates of the projected center
    cov2d: np.ndarray       # (N, 3) packed symmetric (c00, c01, c11)
    conic: np.ndarray       # (N, 3) packed inverse covariance
    depth: np.ndarray       # (N,) camera-frame z
    p_cam: np.ndarray       # (N, 3) camera-frame centers (z floored for culled)
    radius: np.ndarray      # (N,) 3-sigma screen radius
    valid: np.ndarray       # (N,) bool: in front of the camera and on screen
    bbox: np.ndarray        # (N, 4) int64 pixel bounds x0, x1, y0, y1 (half-open)
    order: np.ndarray       # (K,) int64 indices of valid gaussians, near to far


@dataclass
class RenderResult:
    image: np.ndarray          # (H, W, 3)
    alpha: np.ndarray          # (H, W) composited opacity
    transmittance: np.ndarray  # (H, W) remaining transmittance (1 - alpha)
    visibility: np.ndarray     # (N,) max blend weight of each gaussian
    projected: ProjectedGaussians


@dataclass
class GaussianGrads:
    """Parameter gradients plus the raw screen-space center gradient."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    mean2d: np.ndarray


def project_gaussians(cloud: GaussianCloud, pose: CameraPose, intr: CameraIntrinsics) -> ProjectedGaussians:
    """EWA projection of all gaussians into one camera."""
    n = len(cloud)
    rc = pose.rotation
    pc = cloud.positions @ rc.T + pose.translation
    depth = pc[:, 2].copy()
    in_front = depth > DEPTH_EPS
    pc_safe = pc.copy()
    pc_safe[~in_front, 2] = 1.0
    z = pc_safe[:, 2]
    mean2d = np.column_stack([intr.fx * pc_safe[:, 0] / z + intr.cx, intr.fy * pc_safe[:, 1] / z + intr.cy])

    rq = quaternions_to_matrices(cloud.rotations)
    s2 = np.exp(2.0 * cloud.log_scales)
    sig_w = np.einsum("nij,nj,nkj->nik", rq, s2, rq)
    sig_c = np.einsum("ij,njk,lk->nil", rc, sig_w, rc)
    jac = perspective_jacobian(pc_safe, intr)
    cov = np.einsum("nij,njk,nlk->nil", jac, sig_c, jac)
    c00 = cov[:, 0, 0] + COV2D_DILATION
    c01 = cov[:, 0, 1]
    c11 = cov[:, 1, 1] + COV2D_DILATION
    det = c00 * c11 - c01 * c01
    det_safe = np.where(np.abs(det) > 1e-300, det, 1.0)
    conic = np.column_stack([c11 / det_safe, -c01 / det_safe, c00 / det_safe])

    mid = 0.5 * (c00 + c11)
    lam_max = mid + np.sqrt(np.maximum((0.5 * (c00 - c11)) ** 2 + c01 * c01, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))

    x0 = np.clip(np.floor(mean2d[:, 0] - radius), 0, intr.width).astype(np.int64)
    x1 = np.clip(np.ceil(mean2d[:, 0] + radius) + 1, 0, intr.width).astype(np.int64)
    y0 = np.clip(np.floor(mean2d[:, 1] - radius), 0, intr.height).astype(np.int64)
    y1 = np.clip(np.ceil(mean2d[:, 1] + radius) + 1, 0, intr.height).astype(np.int64)
    valid = in_front & (x0 < x1) & (y0 < y1)
    bbox = np.column_stack([x0, x1, y0, y1])
    bbox[~valid] = 0

    idx = np.nonzero(valid)[0]
    order = idx[np.argsort(depth[idx], kind="stable")].astype(np.int64)
    return ProjectedGaussians(
        mean2d=np.ascontiguousarray(mean2d),
        cov2d=np.ascontiguousarray(np.column_stack([c00, c01, c11])),
        conic=np.ascontiguousarray(conic),
        depth=depth,
        p_cam=np.ascontiguousarray(pc_safe),
        radius=radius,
        valid=valid,
        bbox=np.ascontiguousarray(bbox),
        order=np.ascontiguousarray(order),
    )


@njit(cache=True)
def _composite_forward(order, means, conics, alphas, colors, bbox, height, width):
    n = means.shape[0]
    image = np.zeros((height, width, 3))
    transmittance = np.ones((height, width))
    visibility = np.zeros(n)
    for oi in range(order.shape[0]):
        i = order[oi]
        x0, x1, y0, y1 = bbox[i, 0], bbox[i, 1], bbox[i, 2], bbox[i, 3]
        a00, a01, a11 = conics[i, 0], conics[i, 1], conics[i, 2]
        mu0, mu1 = means[i, 0], means[i, 1]
        al = alphas[i]
        c0, c1, c2 = colors[i, 0], colors[i, 1], colors[i, 2]
        vmax = 0.0
        for py in range(y0, y1):
            dy = py - mu1
            for px in range(x0, x1):
                dx = px - mu0
                q = a00 * dx * dx + 2.0 * a01 * dx * dy + a11 * dy * dy
                if q > TRUNCATION_Q:
                    continue
                a = al * math.exp(-0.5 * q)
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                if a < _A_MIN:
                    continue
                t = transmittance[py, px]
                wgt = a * t
                image[py, px, 0] += wgt * c0
                image[py, px, 1] += wgt * c1
                image[py, px, 2] += wgt * c2
                transmittance[py, px] = t * (1.0 - a)
                if wgt > vmax:
                    vmax = wgt
        visibility[i] = vmax
    return image, transmittance, visibility


@njit(cache=True)
def _composite_backward(order, means, conics, alphas, colors, bbox, grad_image, t_final):
    n = means.shape[0]
    t_img = t_final.copy()
    s_img = np.zeros((t_final.shape[0], t_final.shape[1], 3))
    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_alpha = np.zeros(n)
    d_color = np.zeros((n, 3))
    # walk far-to-near, rebuilding each pixel's transmittance prefix and the
    # color suffix S = sum_{behind} c_k a_k T_k needed for d/d a_i
    for oi in range(order.shape[0] - 1, -1, -1):
        i = order[oi]
        x0, x1, y0, y1 = bbox[i, 0], bbox[i, 1], bbox[i, 2], bbox[i, 3]
        a00, a01, a11 = conics[i, 0], conics[i, 1], conics[i, 2]
        mu0, mu1 = means[i, 0], means[i, 1]
        al = alphas[i]
        c0, c1, c2 = colors[i, 0], colors[i, 1], colors[i, 2]
        for py in range(y0, y1):
            dy = py - mu1
            for px in range(x0, x1):
                dx = px - mu0
                q = a00 * dx * dx + 2.0 * a01 * dx * dy + a11 * dy * dy
                if q > TRUNCATION_Q:
                    continue
                g = math.exp(-0.5 * q)
                a = al * g
                clamped = a > ALPHA_CLAMP
                if clamped:
                    a = ALPHA_CLAMP
                if a < _A_MIN:
                    continue
                one_minus = 1.0 - a
                t_after = t_img[py, px]
                t_before = t_after / one_minus
                wgt = a * t_before
                g0 = grad_image[py, px, 0]
                g1 = grad_image[py, px, 1]
                g2 = grad_image[py, px, 2]
                d_color[i, 0] += g0 * wgt
                d_color[i, 1] += g1 * wgt
                d_color[i, 2] += g2 * wgt
                dot_c = g0 * c0 + g1 * c1 + g2 * c2
                dot_s = g0 * s_img[py, px, 0] + g1 * s_img[py, px, 1] + g2 * s_img[py, px, 2]
                dl_da = dot_c * t_before - dot_s / one_minus
                if not clamped:
                    d_alpha[i] += dl_da * g
                    dl_dq = -0.5 * a * dl_da
                    d_conic[i, 0] += dl_dq * dx * dx
                    d_conic[i, 1] += dl_dq * 2.0 * dx * dy
                    d_conic[i, 2] += dl_dq * dy * dy
                    d_mean[i, 0] -= dl_dq * 2.0 * (a00 * dx + a01 * dy)
                    d_mean[i, 1] -= dl_dq * 2.0 * (a01 * dx + a11 * dy)
                s_img[py, px, 0] += c0 * wgt
                s_img[py, px, 1] += c1 * wgt
                s_img[py, px, 2] += c2 * wgt
                t_img[py, px] = t_before
    return d_mean, d_conic, d_alpha, d_color


def render(cloud: GaussianCloud, pose: CameraPose, intr: CameraIntrinsics) -> RenderResult:
    """Render the cloud into one camera; returns image, alpha and per-gaussian
    visibility (max blend weight, used for occlusion gating)."""
    proj = project_gaussians(cloud, pose, intr)
    alphas = sigmoid(cloud.opacity_logits)
    image, transmittance, visibility = _composite_forward(
        proj.order,
        proj.mean2d,
        proj.conic,
        np.ascontiguousarray(alphas),
        np.ascontiguousarray(cloud.colors),
        proj.bbox,
        intr.height,
        intr.width,
    )
    return RenderResult(image, 1.0 - transmittance, transmittance, visibility, proj)


def render_backward(
    cloud: GaussianCloud,
    pose: CameraPose,
    intr: CameraIntrinsics,
    grad_image: np.ndarray,
    forward: RenderResult,
) -> GaussianGrads:
    """Backpropagate d(loss)/d(image) to all gaussian parameters.

    `forward` must be the RenderResult produced for the same cloud/pose/intr;
    its transmittance map seeds the reverse compositing walk.
    """
    proj = forward.projected
    n = len(cloud)
    alphas = sigmoid(cloud.opacity_logits)
    d_mean2d, d_conic, d_alpha, d_color = _composite_backward(
        proj.order,
        proj.mean2d,
        proj.conic,
        np.ascontiguousarray(alphas),
        np.ascontiguousarray(cloud.colors),
        proj.bbox,
        np.ascontiguousarray(np.asarray(grad_image, dtype=float)),
        forward.transmittance,
    )

    rc = pose.rotation
    pc = proj.p_cam
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    valid = proj.valid.astype(float)[:, None]

    # conic -> cov2d: A = C^{-1}; the packed off-diagonal entry collected both
    # symmetric slots, so split it before the matrix chain rule
    a_mat = np.empty((n, 2, 2))
    a_mat[:, 0, 0] = proj.conic[:, 0]
    a_mat[:, 0, 1] = a_mat[:, 1, 0] = proj.conic[:, 1]
    a_mat[:, 1, 1] = proj.conic[:, 2]
    m_a = np.empty((n, 2, 2))
    m_a[:, 0, 0] = d_conic[:, 0]
    m_a[:, 0, 1] = m_a[:, 1, 0] = 0.5 * d_conic[:, 1]
    m_a[:, 1, 1] = d_conic[:, 2]
    d_cov = -np.einsum("nij,njk,nkl->nil", a_mat, m_a, a_mat)

    rq = quaternions_to_matrices(cloud.rotations)
    s2 = np.exp(2.0 * cloud.log_scales)
    sig_w = np.einsum("nij,nj,nkj->nik", rq, s2, rq)
    sig_c = np.einsum("ij,njk,lk->nil", rc, sig_w, rc)
    jac = perspective_jacobian(pc, intr)

    d_sig_c = np.einsum("nji,njk,nkl->nil", jac, d_cov, jac)
    d_jac = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov, jac, sig_c)

    # the perspective Jacobian itself depends on the camera-frame center
    d_pc = np.zeros((n, 3))
    d_pc[:, 0] = d_jac[:, 0, 2] * (-intr.fx / z**2)
    d_pc[:, 1] = d_jac[:, 1, 2] * (-intr.fy / z**2)
    d_pc[:, 2] = (
        d_jac[:, 0, 0] * (-intr.fx / z**2)
        + d_jac[:, 0, 2] * (2.0 * intr.fx * x / z**3)
        + d_jac[:, 1, 1] * (-intr.fy / z**2)
        + d_jac[:, 1, 2] * (2.0 * intr.fy * y / z**3)
    )
    d_pc += np.einsum("nji,nj->ni", jac, d_mean2d)
    d_positions = (d_pc @ rc) * valid

    d_sig_w = np.einsum("ji,njk,kl->nil", rc, d_sig_c, rc)
    d_rq = 2.0 * np.einsum("nij,njk->nik", d_sig_w, rq) * s2[:, None, :]
    d_s2 = np.einsum("nji,njk,nki->ni", rq, d_sig_w, rq)
    d_log_scales = d_s2 * 2.0 * s2 * valid

    d_rotations = _quaternion_grad(cloud.rotations, d_rq) * valid
    d_logits = d_alpha * alphas * (1.0 - alphas) * valid[:, 0]
    d_colors = d_color * valid

    return GaussianGrads(
        positions=d_positions,
        log_scales=d_log_scales,
        rotations=d_rotations,
        opacity_logits=d_logits,
        colors=d_colors,
        mean2d=d_mean2d * valid,
    )


def _quaternion_grad(quats: np.ndarray, d_rq: np.ndarray) -> np.ndarray:
    """Chain dL/dR(q_hat) to the stored quaternion, including normalization."""
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = len(q)
    zero = np.zeros(n)
    d_r_dq = np.empty((n, 4, 3, 3))
    d_r_dq[:, 0] = 2.0 * np.stack(
        [np.stack([zero, -z, y], 1), np.stack([z, zero, -x], 1), np.stack([-y, x, zero], 1)], 1
    )
    d_r_dq[:, 1] = 2.0 * np.stack(
        [np.stack([zero, y, z], 1), np.stack([y, -2 * x, -w], 1), np.stack([z, w, -2 * x], 1)], 1
    )
    d_r_dq[:, 2] = 2.0 * np.stack(
        [np.stack([-2 * y, x, w], 1), np.stack([x, zero, z], 1), np.stack([-w, z, -2 * y], 1)], 1
    )
    d_r_dq[:, 3] = 2.0 * np.stack(
        [np.stack([-2 * z, -w, x], 1), np.stack([w, -2 * z, y], 1), np.stack([x, y, zero], 1)], 1
    )
    d_qhat = np.einsum("nij,nkij->nk", d_rq, d_r_dq)
    # normalization projects onto the tangent of the unit sphere
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    return (d_qhat - q * np.sum(q * d_qhat, axis=1, keepdims=True)) / norms
