"""Image quality (PSNR, SSIM) and trajectory error (ATE, RPE) metrics."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .geometry import CameraPose

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def compute_psnr(image: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs return +inf."""
    a = np.asarray(image, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_kernel():
    ax = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    k = np.exp(-0.5 * (ax / SSIM_SIGMA) ** 2)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, kernel, axis=0, mode="constant")
    return ndimage.correlate1d(out, kernel, axis=1, mode="constant")


def _ssim_terms(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError("expected two H x W x C images of equal shape")
    half = SSIM_WINDOW // 2
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError("images smaller than the SSIM window")
    k = _ssim_kernel()
    mu_a = _windowed_mean(a, k)
    mu_b = _windowed_mean(b, k)
    var_a = _windowed_mean(a * a, k) - mu_a**2
    var_b = _windowed_mean(b * b, k) - mu_b**2
    cov = _windowed_mean(a * b, k) - mu_a * mu_b
    # only windows fully inside the image count
    sl = (slice(half, a.shape[0] - half), slice(half, a.shape[1] - half))
    return a, b, k, sl, mu_a, mu_b, var_a, var_b, cov


def compute_ssim(image: np.ndarray, reference: np.ndarray) -> float:
    """Mean structural similarity over Gaussian-weighted interior windows."""
    _, _, _, sl, mu_a, mu_b, var_a, var_b, cov = _ssim_terms(image, reference)
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return float(np.mean((a1 * a2 / (b1 * b2))[sl]))


def ssim_and_gradient(image: np.ndarray, reference: np.ndarray):
    """SSIM plus d(mean SSIM)/d(image), for use inside photometric losses.

    Returns:
        (ssim value, gradient array shaped like `image`).
    """
    a, b, k, sl, mu_a, mu_b, var_a, var_b, cov = _ssim_terms(image, reference)
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    s_map = a1 * a2 / (b1 * b2)
    count = s_map[sl].size
    value = float(np.mean(s_map[sl]))

    # partials of S holding the other window statistics fixed
    g_mu = (2 * mu_b * a2 * b1 - 2 * mu_a * a1 * a2) / (b1**2 * b2)
    g_var = -s_map / b2
    g_cov = 2 * a1 / (b1 * b2)
    # windows outside the valid interior contribute nothing
    mask = np.zeros(s_map.shape)
    mask[sl] = 1.0
    g_mu = g_mu * mask / count
    g_var = g_var * mask / count
    g_cov = g_cov * mask / count

    # total derivative: mu, var and cov all see pixel (p) through the kernel
    grad = (
        _windowed_mean(g_mu, k)
        + 2.0 * a * _windowed_mean(g_var, k)
        - 2.0 * _windowed_mean(g_var * mu_a, k)
        + b * _windowed_mean(g_cov, k)
        - _windowed_mean(g_cov * mu_b, k)
    )
    return value, grad


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Closed-form similarity dst ~ s R src + t.

    Args:
        src, dst: (N, 3) corresponding points, N >= 3, non-collinear.
        with_scale: solve for scale (otherwise s = 1).

    Returns:
        (s, R, t).
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("expected matching (N, 3) point sets")
    if len(src) < 3:
        raise ValueError("need at least 3 correspondences")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise ValueError("degenerate (collinear) point configuration")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    r = u @ s_fix @ vt
    if with_scale:
        var_s = float(np.mean(np.sum(xs**2, axis=1)))
        scale = float(np.trace(np.diag(d) @ s_fix)) / var_s
    else:
        scale = 1.0
    t = mu_d - scale * r @ mu_s
    return scale, r, t


def _centers(poses) -> np.ndarray:
    return np.array([p.camera_center for p in poses])


def compute_ate(estimated, reference) -> float:
    """RMS camera-center distance after similarity alignment onto the reference.

    Args:
        estimated, reference: equal-length lists of CameraPose in matching order.
    """
    if len(estimated) != len(reference):
        raise ValueError("trajectory lengths differ")
    src = _centers(estimated)
    dst = _centers(reference)
    s, r, t = umeyama_alignment(src, dst)
    resid = dst - (s * src @ r.T + t)
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


def _cam_to_world(pose: CameraPose) -> np.ndarray:
    m = np.eye(4)
    r = pose.rotation
    m[:3, :3] = r.T
    m[:3, 3] = -r.T @ pose.translation
    return m


def compute_rpe(estimated, reference, delta: int = 1):
    """Relative pose error over motion steps of length `delta`.

    Returns:
        (translation RMS in scene units, rotation RMS in degrees).
    """
    if len(estimated) != len(reference):
        raise ValueError("trajectory lengths differ")
    n = len(estimated)
    if n <= delta:
        raise ValueError("need more poses than the step size")
    trans_sq = []
    rot_sq = []
    for i in range(n - delta):
        q_rel = np.linalg.inv(_cam_to_world(reference[i])) @ _cam_to_world(reference[i + delta])
        p_rel = np.linalg.inv(_cam_to_world(estimated[i])) @ _cam_to_world(estimated[i + delta])
        err = np.linalg.inv(q_rel) @ p_rel
        trans_sq.append(float(np.sum(err[:3, 3] ** 2)))
        r = err[:3, :3]
        # atan2 form is stable near zero where acos(trace) loses precision
        skew = 0.5 * math.hypot(r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1])
        ang = math.atan2(skew, (np.trace(r) - 1.0) / 2.0)
        rot_sq.append(math.degrees(ang) ** 2)
    return float(np.sqrt(np.mean(trans_sq))), float(np.sqrt(np.mean(rot_sq)))
