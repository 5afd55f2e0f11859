"""Image buffers: H x W x 3 float arrays in [0, 1], plus sampling helpers."""
from __future__ import annotations

import numpy as np


def validate_image(image: np.ndarray) -> np.ndarray:
    """Coerce to float64 H x W x 3 and check the value range."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {img.shape}")
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return img


def sample_bilinear_many(image: np.ndarray, uv: np.ndarray):
    """Bilinearly interpolate an image at continuous pixel coordinates.

    Args:
        image: (H, W, C) array; integer coordinates address pixel centers.
        uv: (N, 2) sample locations (u = column, v = row).

    Returns:
        (values (N, C), valid (N,) bool). Samples outside
        [0, W-1] x [0, H-1] are zero-filled and flagged invalid.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    u, v = uv[:, 0], uv[:, 1]
    valid = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.minimum(np.floor(uc).astype(int), w - 2) if w > 1 else np.zeros(len(uc), dtype=int)
    v0 = np.minimum(np.floor(vc).astype(int), h - 2) if h > 1 else np.zeros(len(vc), dtype=int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[:, None]
    fv = (vc - v0)[:, None]
    vals = (
        img[v0, u0] * (1 - fu) * (1 - fv)
        + img[v0, u1] * fu * (1 - fv)
        + img[v1, u0] * (1 - fu) * fv
        + img[v1, u1] * fu * fv
    )
    vals[~valid] = 0.0
    return vals, valid


def sample_bilinear(image: np.ndarray, uv: np.ndarray):
    """Single-sample wrapper; returns (value (C,), in_bounds flag)."""
    vals, valid = sample_bilinear_many(image, np.asarray(uv, dtype=float)[None, :])
    return vals[0], bool(valid[0])


def image_gradients(image: np.ndarray):
    """Per-channel spatial gradients of an image.

    Central differences in the interior, one-sided at the borders.

    Returns:
        (grad_u, grad_v), each shaped like `image`.
    """
    img = np.asarray(image, dtype=float)
    grad_u = np.gradient(img, axis=1)
    grad_v = np.gradient(img, axis=0)
    return grad_u, grad_v
