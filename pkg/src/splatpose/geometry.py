"""Camera geometry: Euler-angle rotations, pinhole projection, analytic Jacobians.

Conventions used across the package:
  * world -> camera: p_cam = R @ p_world + t
  * R = Rz(gamma) @ Ry(beta) @ Rx(alpha), angles stored as (alpha, beta, gamma)
  * pixel u axis is horizontal (image column), v is vertical (image row)
  * pose increments are ordered (alpha, beta, gamma, tx, ty, tz)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# points closer than this to the camera plane are treated as invisible
DEPTH_EPS = 1e-8


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_to_rotation(angles: np.ndarray) -> np.ndarray:
    """Build the rotation matrix for z-y-x composed Euler angles.

    Args:
        angles: (3,) array (alpha, beta, gamma) of rotations about x, y, z.

    Returns:
        (3, 3) rotation matrix Rz(gamma) @ Ry(beta) @ Rx(alpha).
    """
    a, b, g = np.asarray(angles, dtype=float)
    return rotation_z(g) @ rotation_y(b) @ rotation_x(a)


def rotation_jacobians(angles: np.ndarray) -> np.ndarray:
    """Analytic derivatives of the rotation matrix w.r.t. each Euler angle.

    Args:
        angles: (3,) array (alpha, beta, gamma).

    Returns:
        (3, 3, 3) array; entry [i] is dR/dangle_i, same ordering as `angles`.
    """
    a, b, g = np.asarray(angles, dtype=float)
    rx, ry, rz = rotation_x(a), rotation_y(b), rotation_z(g)
    return np.stack(
        [
            rz @ ry @ _drotation_x(a),
            rz @ _drotation_y(b) @ rx,
            _drotation_z(g) @ ry @ rx,
        ]
    )


def rotation_to_euler(r: np.ndarray) -> np.ndarray:
    """Extract (alpha, beta, gamma) with R = Rz(gamma) Ry(beta) Rx(alpha).

    Near beta = +-pi/2 the x/z split is degenerate; gamma is pinned to 0 there.
    """
    r = np.asarray(r, dtype=float)
    # r[2,0] = -sin(beta); the column norm keeps beta in [-pi/2, pi/2]
    beta = np.arctan2(-r[2, 0], np.hypot(r[0, 0], r[1, 0]))
    if np.hypot(r[0, 0], r[1, 0]) < 1e-12:
        alpha = np.arctan2(-r[1, 2], r[1, 1])
        gamma = 0.0
    else:
        alpha = np.arctan2(r[2, 1], r[2, 2])
        gamma = np.arctan2(r[1, 0], r[0, 0])
    return canonicalize_angles(np.array([alpha, beta, gamma]))


def canonicalize_angles(angles: np.ndarray) -> np.ndarray:
    """Wrap each angle into (-pi, pi]."""
    a = np.asarray(angles, dtype=float)
    return -((-a + np.pi) % (2.0 * np.pi) - np.pi)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)
# ---------------------------------------------------------------------------

def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion (w, x, y, z); normalizes first."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, canonical w >= 0."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


# ---------------------------------------------------------------------------
# camera containers
# ---------------------------------------------------------------------------

@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics plus the image size they refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass
class CameraPose:
    """World -> camera rigid transform as Euler angles + translation."""

    angles: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float).reshape(3).copy()
        self.translation = np.asarray(self.translation, dtype=float).reshape(3).copy()

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_rt(cls, r: np.ndarray, t: np.ndarray) -> "CameraPose":
        return cls(rotation_to_euler(r), np.asarray(t, dtype=float))

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.angles)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def camera_center(self) -> np.ndarray:
        r = self.rotation
        return -r.T @ self.translation

    def copy(self) -> "CameraPose":
        return CameraPose(self.angles.copy(), self.translation.copy())

    def params(self) -> np.ndarray:
        """Pose as the 6-vector (alpha, beta, gamma, tx, ty, tz)."""
        return np.concatenate([self.angles, self.translation])


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def transform_points(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Map world points (N, 3) into the camera frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts @ pose.rotation.T + pose.translation


def project_points(points: np.ndarray, pose: CameraPose, intr: CameraIntrinsics):
    """Project world points through a pose and pinhole intrinsics.

    Args:
        points: (N, 3) world points.
        pose: world -> camera transform.
        intr: pinhole intrinsics.

    Returns:
        (pixels (N, 2), depths (N,), valid (N,) bool). Pixels of points at or
        behind the camera plane (depth <= DEPTH_EPS) are NaN and flagged invalid.
    """
    pc = transform_points(points, pose)
    depth = pc[:, 2]
    valid = depth > DEPTH_EPS
    z = np.where(valid, depth, 1.0)
    pixels = np.empty((len(pc), 2))
    pixels[:, 0] = intr.fx * pc[:, 0] / z + intr.cx
    pixels[:, 1] = intr.fy * pc[:, 1] / z + intr.cy
    pixels[~valid] = np.nan
    return pixels, depth, valid


def project_point(point: np.ndarray, pose: CameraPose, intr: CameraIntrinsics):
    """Single-point convenience wrapper around project_points."""
    pixels, depth, valid = project_points(np.asarray(point, dtype=float)[None, :], pose, intr)
    return pixels[0], float(depth[0]), bool(valid[0])


def backproject(pixel: np.ndarray, depth: float, pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    """Invert project_point for a pixel with known depth.

    Args:
        pixel: (2,) pixel coordinates (u, v).
        depth: camera-frame z of the point, must exceed DEPTH_EPS.

    Returns:
        (3,) world point.
    """
    if depth <= DEPTH_EPS:
        raise ValueError("cannot backproject a culled depth")
    u, v = np.asarray(pixel, dtype=float)
    pc = np.array([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth])
    r = pose.rotation
    return r.T @ (pc - pose.translation)


def perspective_jacobian(p_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(camera point) for points already in the camera frame.

    Args:
        p_cam: (N, 3) camera-frame points with positive depth.

    Returns:
        (N, 2, 3) Jacobians [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]].
    """
    pc = np.atleast_2d(np.asarray(p_cam, dtype=float))
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    jac = np.zeros((len(pc), 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / (z * z)
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / (z * z)
    return jac


def projection_jacobians(points: np.ndarray, pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(pose params) for world points, pose params (a, b, g, tx, ty, tz).

    Args:
        points: (N, 3) world points with positive depth under `pose`.

    Returns:
        (N, 2, 6) Jacobians; rotation columns first, translation columns last.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pc = transform_points(pts, pose)
    persp = perspective_jacobian(pc, intr)
    rot_jac = rotation_jacobians(pose.angles)
    # d p_cam / d angle_i = (dR/dangle_i) @ x ; d p_cam / d t = I
    dpc = np.empty((len(pts), 3, 6))
    for i in range(3):
        dpc[:, :, i] = pts @ rot_jac[i].T
    dpc[:, :, 3:] = np.eye(3)
    return np.einsum("nij,njk->nik", persp, dpc)


def projection_jacobian(point: np.ndarray, pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    """Single-point convenience wrapper around projection_jacobians."""
    return projection_jacobians(np.asarray(point, dtype=float)[None, :], pose, intr)[0]
