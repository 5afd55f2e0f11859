"""Difference-of-Gaussians keypoints with gradient-histogram descriptors.

Classic scale-space recipe: build a Gaussian pyramid, find 3x3x3 extrema of
adjacent-scale differences, refine each candidate with a quadratic fit,
reject weak or edge-like responses, assign dominant gradient orientations,
then describe a rotated 4x4 cell grid of gradient histograms (128 numbers,
clipped at 0.2 and renormalized to unit length).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

MIN_IMAGE_SIDE = 32
N_HIST = 4  # spatial cells per descriptor axis
N_ORI = 8  # orientation bins per cell
N_ORI_HIST = 36  # bins of the orientation-assignment histogram
ASSUMED_BLUR = 0.5  # blur already present in the input image


@dataclass
class Keypoint:
    position: np.ndarray  # (u, v) pixels in the original image
    scale: float  # characteristic sigma, pixels
    orientation: float  # radians
    descriptor: np.ndarray = field(default_factory=lambda: np.zeros(N_HIST * N_HIST * N_ORI))
    response: float = 0.0


def _to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 3:
        return image[:, :, 0] * 0.299 + image[:, :, 1] * 0.587 + image[:, :, 2] * 0.114
    if image.ndim != 2:
        raise ValueError("image must be HxW or HxWx3")
    return image


def _upsample2(g: np.ndarray) -> np.ndarray:
    """Bilinear doubling where output pixel (2i, 2j) equals input (i, j), so
    upsampled coordinates map back to the original by an exact halving."""
    h, w = g.shape
    right = np.empty_like(g)
    right[:, :-1] = 0.5 * (g[:, :-1] + g[:, 1:])
    right[:, -1] = g[:, -1]
    up = np.empty((2 * h, 2 * w))
    up[0::2, 0::2] = g
    up[0::2, 1::2] = right
    up[1::2, 0::2][:-1] = 0.5 * (g[:-1] + g[1:])
    up[1::2, 0::2][-1] = g[-1]
    up[1::2, 1::2][:-1] = 0.5 * (right[:-1] + right[1:])
    up[1::2, 1::2][-1] = right[-1]
    return up


def _pyramid(gray: np.ndarray, n_octaves: int, n_scales: int, sigma0: float, upsample: bool):
    """Per octave, n_scales + 3 progressively blurred copies."""
    k = 2.0 ** (1.0 / n_scales)
    sigmas = sigma0 * k ** np.arange(n_scales + 3)
    if upsample:
        working = _upsample2(gray)
        assumed = 2.0 * ASSUMED_BLUR
    else:
        working = gray
        assumed = ASSUMED_BLUR
    base = gaussian_filter(working, max(np.sqrt(max(sigma0**2 - assumed**2, 0.0)), 1e-6))
    octaves = []
    for _ in range(n_octaves):
        levels = [base]
        for i in range(1, n_scales + 3):
            step = np.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2)
            levels.append(gaussian_filter(levels[-1], step))
        octaves.append(np.stack(levels))
        base = levels[n_scales][::2, ::2]
    return octaves, sigmas


def _quadratic_refine(dogs: np.ndarray, l: int, y: int, x: int):
    """Fit a 3D quadratic around a lattice extremum; returns the refined
    (level, y, x, interpolated value) or None when the fit walks away."""
    n_l, h, w = dogs.shape
    for _ in range(3):
        d = dogs
        g = 0.5 * np.array(
            [d[l + 1, y, x] - d[l - 1, y, x], d[l, y + 1, x] - d[l, y - 1, x], d[l, y, x + 1] - d[l, y, x - 1]]
        )
        c = d[l, y, x]
        hll = d[l + 1, y, x] + d[l - 1, y, x] - 2 * c
        hyy = d[l, y + 1, x] + d[l, y - 1, x] - 2 * c
        hxx = d[l, y, x + 1] + d[l, y, x - 1] - 2 * c
        hly = 0.25 * (d[l + 1, y + 1, x] - d[l + 1, y - 1, x] - d[l - 1, y + 1, x] + d[l - 1, y - 1, x])
        hlx = 0.25 * (d[l + 1, y, x + 1] - d[l + 1, y, x - 1] - d[l - 1, y, x + 1] + d[l - 1, y, x - 1])
        hyx = 0.25 * (d[l, y + 1, x + 1] - d[l, y + 1, x - 1] - d[l, y - 1, x + 1] + d[l, y - 1, x - 1])
        hess = np.array([[hll, hly, hlx], [hly, hyy, hyx], [hlx, hyx, hxx]])
        try:
            offset = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = c + 0.5 * float(g @ offset)
            return l + offset[0], y + offset[1], x + offset[2], value
        l += int(round(offset[0]))
        y += int(round(offset[1]))
        x += int(round(offset[2]))
        if not (1 <= l <= n_l - 2 and 1 <= y <= h - 2 and 1 <= x <= w - 2):
            return None
    return None


def _passes_edge_test(dogs, l, y, x, edge_ratio) -> bool:
    c = dogs[l, y, x]
    dxx = dogs[l, y, x + 1] + dogs[l, y, x - 1] - 2 * c
    dyy = dogs[l, y + 1, x] + dogs[l, y - 1, x] - 2 * c
    dxy = 0.25 * (dogs[l, y + 1, x + 1] - dogs[l, y + 1, x - 1] - dogs[l, y - 1, x + 1] + dogs[l, y - 1, x - 1])
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    return det > 0 and tr * tr / det < (edge_ratio + 1) ** 2 / edge_ratio


def _gradients(level_img: np.ndarray):
    gy, gx = np.gradient(level_img)
    return np.hypot(gx, gy), np.arctan2(gy, gx)


def _orientations(mag, ang, x, y, sigma):
    """Dominant directions of the smoothed gradient-orientation histogram."""
    h, w = mag.shape
    radius = max(int(round(3.0 * 1.5 * sigma)), 1)
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    if x1 <= x0 or y1 <= y0:
        return []
    uu, vv = np.meshgrid(np.arange(x0, x1) - x, np.arange(y0, y1) - y)
    weight = np.exp(-(uu**2 + vv**2) / (2.0 * (1.5 * sigma) ** 2)) * mag[y0:y1, x0:x1]
    bins = np.floor(((ang[y0:y1, x0:x1] % (2 * np.pi)) / (2 * np.pi)) * N_ORI_HIST).astype(int) % N_ORI_HIST
    hist = np.zeros(N_ORI_HIST)
    np.add.at(hist, bins.ravel(), weight.ravel())
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    for _ in range(2):
        hist = sum(kernel[i] * np.roll(hist, i - 2) for i in range(5))
    if hist.max() <= 0.0:
        return []
    out = []
    peak = hist.max()
    for i in range(N_ORI_HIST):
        left, right = hist[(i - 1) % N_ORI_HIST], hist[(i + 1) % N_ORI_HIST]
        if hist[i] > left and hist[i] > right and hist[i] >= 0.8 * peak:
            denom = left - 2 * hist[i] + right
            off = 0.0 if denom == 0 else 0.5 * (left - right) / denom
            out.append(((i + off) * 2 * np.pi / N_ORI_HIST, hist[i]))
    out.sort(key=lambda t: -t[1])
    return [theta for theta, _ in out[:2]]


def _descriptor(mag, ang, x, y, sigma, theta):
    """4x4x8 gradient histogram over a rotated, Gaussian-weighted window."""
    h, w = mag.shape
    hist_width = 3.0 * sigma
    radius = int(round(hist_width * np.sqrt(2) * (N_HIST + 1) * 0.5))
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    if x1 <= x0 or y1 <= y0:
        return None
    uu, vv = np.meshgrid(np.arange(x0, x1, dtype=float) - x, np.arange(y0, y1, dtype=float) - y)
    ct, st = np.cos(theta), np.sin(theta)
    u_rot = (uu * ct + vv * st) / hist_width
    v_rot = (-uu * st + vv * ct) / hist_width
    rbin = v_rot + N_HIST / 2 - 0.5
    cbin = u_rot + N_HIST / 2 - 0.5
    keep = (rbin > -1) & (rbin < N_HIST) & (cbin > -1) & (cbin < N_HIST)
    if not np.any(keep):
        return None
    rbin, cbin = rbin[keep], cbin[keep]
    weight = (np.exp(-(u_rot**2 + v_rot**2) / (2 * (0.5 * N_HIST) ** 2)) * mag[y0:y1, x0:x1])[keep]
    obin = (((ang[y0:y1, x0:x1][keep] - theta) % (2 * np.pi)) / (2 * np.pi)) * N_ORI

    hist = np.zeros((N_HIST + 2, N_HIST + 2, N_ORI))
    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    dr, dc, do = rbin - r0, cbin - c0, obin - o0
    for ir in (0, 1):
        wr = weight * (dr if ir else 1 - dr)
        for ic in (0, 1):
            wc = wr * (dc if ic else 1 - dc)
            for io in (0, 1):
                wo = wc * (do if io else 1 - do)
                np.add.at(hist, (r0 + ir + 1, c0 + ic + 1, (o0 + io) % N_ORI), wo)
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 1e-12:
        return None
    vec = np.minimum(vec / norm, 0.2)
    return vec / np.linalg.norm(vec)


def detect_features(
    image: np.ndarray,
    n_scales: int = 3,
    sigma0: float = 1.6,
    contrast_threshold: float = 0.01,
    edge_ratio: float = 10.0,
    upsample: bool = True,
) -> list:
    """Scale/rotation-covariant keypoints of one image, deterministically.

    With `upsample` (the default) detection starts on a doubled image, which
    roughly doubles the keypoint yield on small inputs by exposing blobs
    below the base sigma.

    Raises:
        ValueError: image smaller than 32 pixels on a side.
    """
    gray = _to_gray(image)
    h, w = gray.shape
    if min(h, w) < MIN_IMAGE_SIDE:
        raise ValueError(f"image must be at least {MIN_IMAGE_SIDE} pixels per side, got {h}x{w}")
    n_octaves = int(np.log2(min(h, w) / MIN_IMAGE_SIDE)) + 1
    if upsample:
        n_octaves += 1
    octaves, sigmas = _pyramid(gray, n_octaves, n_scales, sigma0, upsample)
    k = 2.0 ** (1.0 / n_scales)
    octave_base = 0.5 if upsample else 1.0

    keypoints = []
    for oct_index, levels in enumerate(octaves):
        dogs = np.diff(levels, axis=0)
        is_max = dogs == maximum_filter(dogs, size=3, mode="constant", cval=np.inf * -1)
        is_min = dogs == minimum_filter(dogs, size=3, mode="constant", cval=np.inf)
        strong = np.abs(dogs) > 0.5 * contrast_threshold
        cand = (is_max | is_min) & strong
        cand[0] = cand[-1] = False
        cand[:, :1] = cand[:, -1:] = False
        cand[:, :, :1] = cand[:, :, -1:] = False
        grad_cache = {}
        for l, y, x in zip(*np.nonzero(cand)):
            refined = _quadratic_refine(dogs, int(l), int(y), int(x))
            if refined is None:
                continue
            rl, ry, rx, value = refined
            if abs(value) < contrast_threshold:
                continue
            if not _passes_edge_test(dogs, int(l), int(y), int(x), edge_ratio):
                continue
            level_near = int(np.clip(round(rl), 0, len(levels) - 1))
            if level_near not in grad_cache:
                grad_cache[level_near] = _gradients(levels[level_near])
            mag, angm = grad_cache[level_near]
            sigma_oct = sigma0 * k**rl
            for theta in _orientations(mag, angm, int(round(rx)), int(round(ry)), sigma_oct):
                desc = _descriptor(mag, angm, int(round(rx)), int(round(ry)), sigma_oct, theta)
                if desc is None:
                    continue
                scale_factor = octave_base * 2.0**oct_index
                keypoints.append(
                    Keypoint(
                        position=np.array([rx * scale_factor, ry * scale_factor]),
                        scale=sigma_oct * scale_factor,
                        orientation=theta,
                        descriptor=desc,
                        response=abs(value),
                    )
                )
    return keypoints
