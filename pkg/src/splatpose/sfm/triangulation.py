"""Triangulation of a single 3D point from pixel observations.

The linear DLT solution minimizes algebraic error, which is not the quantity
the rest of the pipeline cares about, so one Gauss-Newton step on reprojection
error polishes it. Observations are (pose, intrinsics, pixel) triples.
"""
from __future__ import annotations

import numpy as np

from ..geometry import CameraIntrinsics, CameraPose
from .errors import CheiralityError, InsufficientDataError, LowParallaxError
from .two_view import intrinsic_matrix

MIN_PARALLAX_DEG = 2.0


def _projection_matrix(pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    rt = np.column_stack([pose.rotation, pose.translation])
    return intrinsic_matrix(intr) @ rt


def dlt_triangulate(observations) -> np.ndarray:
    """Linear least-squares triangulation of one point.

    Each observation contributes two rows u*P3 - P1 and v*P3 - P2; the
    homogeneous solution is the smallest right singular vector.
    """
    if len(observations) < 2:
        raise InsufficientDataError("triangulation needs at least two observations")
    rows = []
    for pose, intr, pixel in observations:
        p = _projection_matrix(pose, intr)
        u, v = float(pixel[0]), float(pixel[1])
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
    a = np.asarray(rows)
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < 1e-12 * np.linalg.norm(xh):
        raise LowParallaxError("triangulated point is at infinity")
    return xh[:3] / xh[3]


def _max_parallax_deg(point: np.ndarray, observations) -> float:
    dirs = []
    for pose, _, _ in observations:
        d = pose.camera_center - point
        n = np.linalg.norm(d)
        if n < 1e-12:
            continue
        dirs.append(d / n)
    worst = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            c = np.clip(np.dot(dirs[i], dirs[j]), -1.0, 1.0)
            worst = max(worst, np.degrees(np.arccos(c)))
    return worst


def _depths(point: np.ndarray, observations) -> np.ndarray:
    return np.array(
        [float((pose.rotation @ point + pose.translation)[2]) for pose, _, _ in observations]
    )


def _reprojection(point: np.ndarray, observations):
    """Residual stack (2N,) and Jacobian (2N, 3) of pixel error wrt the point."""
    residuals = np.empty(2 * len(observations))
    jac = np.empty((2 * len(observations), 3))
    for i, (pose, intr, pixel) in enumerate(observations):
        r = pose.rotation
        pc = r @ point + pose.translation
        x, y, z = pc
        residuals[2 * i] = intr.fx * x / z + intr.cx - pixel[0]
        residuals[2 * i + 1] = intr.fy * y / z + intr.cy - pixel[1]
        d_pix = np.array(
            [
                [intr.fx / z, 0.0, -intr.fx * x / (z * z)],
                [0.0, intr.fy / z, -intr.fy * y / (z * z)],
            ]
        )
        jac[2 * i : 2 * i + 2] = d_pix @ r
    return residuals, jac


def triangulate(observations) -> np.ndarray:
    """Triangulate one point; raises on low parallax or negative depth.

    Parallax is the largest angle subtended at the point by any camera pair,
    so identical centers fail here rather than producing an unconstrained
    point somewhere along the shared ray.
    """
    point = dlt_triangulate(observations)
    if _max_parallax_deg(point, observations) < MIN_PARALLAX_DEG:
        raise LowParallaxError(
            f"parallax below {MIN_PARALLAX_DEG} degree across {len(observations)} views"
        )
    if np.any(_depths(point, observations) <= 0.0):
        raise CheiralityError("linear triangulation landed behind a camera")

    residuals, jac = _reprojection(point, observations)
    step, *_ = np.linalg.lstsq(jac, -residuals, rcond=None)
    candidate = point + step
    if np.all(np.isfinite(candidate)) and np.all(_depths(candidate, observations) > 0.0):
        new_res, _ = _reprojection(candidate, observations)
        if new_res @ new_res <= residuals @ residuals:
            point = candidate
    return point
