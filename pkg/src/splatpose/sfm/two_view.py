"""Two-view relative geometry from pixel correspondences.

Conventions used throughout this module:

* Camera a is the reference; a relative pose (R, t) maps a-frame points into
  the b frame, ``x_b = R x_a + t``.
* The essential matrix is ``E = [t]_x R`` and satisfies ``n_b^T E n_a = 0``
  for normalized image coordinates ``n = ((u - cx)/fx, (v - cy)/fy, 1)``.
* Inlier scoring uses the Sampson distance expressed in pixels, obtained by
  pushing E through the intrinsics (``F = K^-T E K^-1``), so thresholds can be
  stated in pixel units regardless of focal length.
"""
from __future__ import annotations

import numpy as np

from ..geometry import CameraIntrinsics, CameraPose
from .errors import (
    CheiralityError,
    DegenerateGeometryError,
    InsufficientDataError,
    RansacFailureError,
)

MIN_CORRESPONDENCES = 8
RANSAC_CONFIDENCE = 0.999
# relative gap between the two smallest singular values of the linear system;
# a second near-zero value means a whole family of E fits the data
RANK_GAP_RATIO = 1e-8
PURE_ROTATION_TOL = 1e-8


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def intrinsic_matrix(intr: CameraIntrinsics) -> np.ndarray:
    return np.array([[intr.fx, 0.0, intr.cx], [0.0, intr.fy, intr.cy], [0.0, 0.0, 1.0]])


def normalize_pixels(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Map pixel coordinates (N, 2) to normalized image coordinates."""
    pix = np.atleast_2d(np.asarray(pixels, dtype=float))
    out = np.empty_like(pix)
    out[:, 0] = (pix[:, 0] - intr.cx) / intr.fx
    out[:, 1] = (pix[:, 1] - intr.cy) / intr.fy
    return out


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def _hartley_transform(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate points to zero mean and scale them to RMS length sqrt(2)."""
    mean = x.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((x - mean) ** 2, axis=1)))
    scale = np.sqrt(2.0) / max(rms, 1e-12)
    t = np.array(
        [
            [scale, 0.0, -scale * mean[0]],
            [0.0, scale, -scale * mean[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (x - mean) * scale, t


def _linear_epipolar_solve(xa: np.ndarray, xb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares epipolar fit on Hartley-normalized coordinates.

    Returns the denormalized 3x3 matrix (not yet on the essential manifold)
    and the singular values of the design matrix, which callers inspect for
    rank deficiency.
    """
    na, ta = _hartley_transform(xa)
    nb, tb = _hartley_transform(xb)
    a = np.empty((len(xa), 9))
    a[:, 0] = nb[:, 0] * na[:, 0]
    a[:, 1] = nb[:, 0] * na[:, 1]
    a[:, 2] = nb[:, 0]
    a[:, 3] = nb[:, 1] * na[:, 0]
    a[:, 4] = nb[:, 1] * na[:, 1]
    a[:, 5] = nb[:, 1]
    a[:, 6] = na[:, 0]
    a[:, 7] = na[:, 1]
    a[:, 8] = 1.0
    _, svals, vt = np.linalg.svd(a, full_matrices=True)
    f_norm = vt[-1].reshape(3, 3)
    return tb.T @ f_norm @ ta, svals


def _project_to_essential(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    sigma = 0.5 * (s[0] + s[1])
    e = u @ np.diag([sigma, sigma, 0.0]) @ vt
    # canonical scale: singular values exactly (1, 1, 0)
    return e / max(sigma, 1e-300)


def eight_point_essential(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Essential matrix from >= 8 normalized correspondences.

    Raises DegenerateGeometryError when the linear system has more than a
    one-dimensional nullspace (coplanar-with-centers scenes, pure rotation),
    because then the returned matrix would be an arbitrary member of a family.
    """
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if len(xa) != len(xb):
        raise ValueError("correspondence arrays must have equal length")
    if len(xa) < MIN_CORRESPONDENCES:
        raise InsufficientDataError(
            f"eight-point solve needs >= {MIN_CORRESPONDENCES} correspondences, got {len(xa)}"
        )
    f, svals = _linear_epipolar_solve(xa, xb)
    if len(xa) > MIN_CORRESPONDENCES and svals[-2] < RANK_GAP_RATIO * svals[0]:
        raise DegenerateGeometryError(
            "epipolar system is rank deficient; correspondences do not "
            "determine a unique essential matrix"
        )
    return _project_to_essential(f)


def sampson_distance(
    e: np.ndarray,
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    intr: CameraIntrinsics,
) -> np.ndarray:
    """First-order geometric error of the epipolar constraint, in pixels."""
    k_inv = np.linalg.inv(intrinsic_matrix(intr))
    f = k_inv.T @ np.asarray(e, dtype=float) @ k_inv
    ha = _homogeneous(np.atleast_2d(np.asarray(pixels_a, dtype=float)))
    hb = _homogeneous(np.atleast_2d(np.asarray(pixels_b, dtype=float)))
    la = ha @ f.T  # rows: F x_a
    lb = hb @ f  # rows: F^T x_b
    num = np.einsum("ni,ni->n", hb, la) ** 2
    den = la[:, 0] ** 2 + la[:, 1] ** 2 + lb[:, 0] ** 2 + lb[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(den > 0.0, num / np.maximum(den, 1e-300), np.inf)
    return np.sqrt(d2)


def estimate_essential_ransac(
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    intr: CameraIntrinsics,
    iterations: int = 2048,
    threshold: float = 1.5,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Robust essential matrix estimation over pixel correspondences.

    Minimal eight-point hypotheses are scored by Sampson distance in pixels;
    iteration count adapts downward as the observed inlier ratio rises. The
    best consensus set is refit with all its members before returning.

    Returns:
        (e, inlier_mask) with e scaled to singular values (1, 1, 0).
    """
    pixels_a = np.atleast_2d(np.asarray(pixels_a, dtype=float))
    pixels_b = np.atleast_2d(np.asarray(pixels_b, dtype=float))
    n = len(pixels_a)
    if n != len(pixels_b):
        raise ValueError("correspondence arrays must have equal length")
    if n < MIN_CORRESPONDENCES:
        raise InsufficientDataError(
            f"essential matrix estimation needs >= {MIN_CORRESPONDENCES} "
            f"correspondences, got {n}"
        )
    xa = normalize_pixels(pixels_a, intr)
    xb = normalize_pixels(pixels_b, intr)

    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    needed = float(iterations)
    it = 0
    while it < iterations and it < needed:
        idx = rng.choice(n, size=MIN_CORRESPONDENCES, replace=False)
        f, _ = _linear_epipolar_solve(xa[idx], xb[idx])
        cand = _project_to_essential(f)
        mask = sampson_distance(cand, pixels_a, pixels_b, intr) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            ratio = count / n
            hit = ratio**MIN_CORRESPONDENCES
            if hit >= 1.0:
                needed = 0.0
            else:
                needed = np.log(1.0 - RANSAC_CONFIDENCE) / np.log(1.0 - hit)
        it += 1

    if best_mask is None or best_count < MIN_CORRESPONDENCES:
        raise RansacFailureError(
            f"no essential matrix reached {MIN_CORRESPONDENCES} inliers "
            f"({n} correspondences)"
        )
    # polish on the consensus set; rank check here catches degenerate scenes
    # that score perfectly under every member of a solution family
    e = eight_point_essential(xa[best_mask], xb[best_mask])
    mask = sampson_distance(e, pixels_a, pixels_b, intr) < threshold
    if int(mask.sum()) < MIN_CORRESPONDENCES:
        raise RansacFailureError("consensus collapsed after refit")
    return e, mask


def _unit_rays(x: np.ndarray) -> np.ndarray:
    h = _homogeneous(x)
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def _looks_like_pure_rotation(xa: np.ndarray, xb: np.ndarray) -> bool:
    """True when one rotation maps every a-ray onto its b-ray."""
    if len(xa) < 4:
        return False
    ra = _unit_rays(xa)
    rb = _unit_rays(xb)
    m = rb.T @ ra
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    aligned = ra @ r.T
    worst = np.min(np.einsum("ni,ni->n", aligned, rb))
    return worst > np.cos(PURE_ROTATION_TOL)


def _cheirality_depths(
    r: np.ndarray, t: np.ndarray, ha: np.ndarray, hb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Two-view depths solving z_b * hb = z_a * R ha + t per point."""
    ra = ha @ r.T
    g11 = np.einsum("ni,ni->n", ra, ra)
    g12 = -np.einsum("ni,ni->n", ra, hb)
    g22 = np.einsum("ni,ni->n", hb, hb)
    b1 = -ra @ t
    b2 = hb @ t
    det = g11 * g22 - g12 * g12
    safe = np.abs(det) > 1e-15
    det = np.where(safe, det, 1.0)
    za = (b1 * g22 - g12 * b2) / det
    zb = (g11 * b2 - g12 * b1) / det
    za[~safe] = -1.0
    zb[~safe] = -1.0
    return za, zb


def recover_pose(
    e: np.ndarray,
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    intr: CameraIntrinsics,
) -> CameraPose:
    """Relative pose (unit-norm translation) from an essential matrix.

    Enumerates the four (R, t) decompositions and keeps the one that places
    the most correspondences in front of both cameras. The translation sign
    is therefore fixed by the data even though E cannot distinguish it.
    """
    pixels_a = np.atleast_2d(np.asarray(pixels_a, dtype=float))
    pixels_b = np.atleast_2d(np.asarray(pixels_b, dtype=float))
    if len(pixels_a) != len(pixels_b) or len(pixels_a) == 0:
        raise InsufficientDataError("pose recovery needs matched, non-empty pixel arrays")
    xa = normalize_pixels(pixels_a, intr)
    xb = normalize_pixels(pixels_b, intr)
    if _looks_like_pure_rotation(xa, xb):
        raise DegenerateGeometryError(
            "correspondences are consistent with a pure rotation; "
            "translation direction is unobservable"
        )

    u, _, vt = np.linalg.svd(np.asarray(e, dtype=float))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]

    ha = _homogeneous(xa)
    hb = _homogeneous(xb)
    best = None
    best_count = -1
    for r_cand, t_cand in ((r1, t), (r1, -t), (r2, t), (r2, -t)):
        za, zb = _cheirality_depths(r_cand, t_cand, ha, hb)
        count = int(np.sum((za > 0.0) & (zb > 0.0)))
        if count > best_count:
            best_count = count
            best = (r_cand, t_cand)
    if best is None or 2 * best_count <= len(xa):
        raise CheiralityError(
            f"no decomposition places a majority of points in front of both "
            f"cameras (best {best_count}/{len(xa)})"
        )
    r_best, t_best = best
    return CameraPose.from_rt(r_best, t_best / np.linalg.norm(t_best))
