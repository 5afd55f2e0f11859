"""Rotation parameterization, pinhole projection, and their Jacobians."""
import math

import numpy as np
import pytest

from splatpose.geometry import (
    DEPTH_EPS,
    CameraIntrinsics,
    CameraPose,
    backproject,
    canonicalize_angles,
    euler_to_rotation,
    perspective_jacobian,
    project_point,
    project_points,
    projection_jacobian,
    projection_jacobians,
    quaternion_from_rotation,
    rotation_from_quaternion,
    rotation_jacobians,
    rotation_to_euler,
)


# ---------------------------------------------------------------------------
# independent oracles, written before the implementation
# ---------------------------------------------------------------------------

def _oracle_rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _oracle_ry(b):
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _oracle_rz(g):
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _oracle_rotation(angles):
    # z-y-x composition: R = Rz(gamma) Ry(beta) Rx(alpha)
    a, b, g = angles
    return _oracle_rz(g) @ _oracle_ry(b) @ _oracle_rx(a)


def _oracle_project(point, pose, intr):
    # scalar pinhole math, no shared code with the implementation
    r = _oracle_rotation(pose.angles)
    pc = r @ np.asarray(point, dtype=float) + pose.translation
    u = intr.fx * pc[0] / pc[2] + intr.cx
    v = intr.fy * pc[1] / pc[2] + intr.cy
    return np.array([u, v]), pc[2]


def _fd_rotation_jacobian(angles, axis, h=1e-6):
    hi = np.array(angles, dtype=float)
    lo = np.array(angles, dtype=float)
    hi[axis] += h
    lo[axis] -= h
    return (_oracle_rotation(hi) - _oracle_rotation(lo)) / (2.0 * h)


def _fd_projection_jacobian(point, pose, intr, h=1e-6):
    base = np.concatenate([pose.angles, pose.translation])
    cols = []
    for k in range(6):
        hi = base.copy()
        lo = base.copy()
        hi[k] += h
        lo[k] -= h
        ph = CameraPose(hi[:3], hi[3:])
        pl = CameraPose(lo[:3], lo[3:])
        cols.append((_oracle_project(point, ph, intr)[0] - _oracle_project(point, pl, intr)[0]) / (2.0 * h))
    return np.stack(cols, axis=1)


def _intr():
    return CameraIntrinsics(fx=320.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def test_rotation_identity_at_zero():
    assert np.allclose(euler_to_rotation(np.zeros(3)), np.eye(3), atol=0.0)


def test_rotation_quarter_turn_about_z():
    r = euler_to_rotation(np.array([0.0, 0.0, np.pi / 2]))
    assert np.allclose(r @ np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), atol=1e-12)


def test_rotation_matches_axis_product_oracle():
    rng = np.random.default_rng(7)
    for _ in range(500):
        angles = rng.uniform(-np.pi, np.pi, size=3)
        assert np.allclose(euler_to_rotation(angles), _oracle_rotation(angles), atol=1e-13)


def test_rotation_orthonormal_unit_determinant():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        r = euler_to_rotation(rng.uniform(-np.pi, np.pi, size=3))
        assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_rotation_jacobians_match_finite_differences():
    rng = np.random.default_rng(13)
    for _ in range(300):
        angles = rng.uniform(-np.pi, np.pi, size=3)
        jac = rotation_jacobians(angles)
        for axis in range(3):
            assert np.abs(jac[axis] - _fd_rotation_jacobian(angles, axis)).max() < 1e-6


def test_rotation_jacobian_zero_angles_z_axis():
    # dR/dgamma at the origin is the generator of in-plane rotation
    jac = rotation_jacobians(np.zeros(3))
    expect = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert np.allclose(jac[2], expect, atol=1e-12)


def test_euler_round_trip_reproduces_matrix():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        r = euler_to_rotation(rng.uniform(-np.pi, np.pi, size=3))
        angles = rotation_to_euler(r)
        assert np.abs(euler_to_rotation(angles) - r).max() < 1e-9
        assert np.all(angles > -np.pi - 1e-12) and np.all(angles <= np.pi + 1e-12)


def test_rotation_to_euler_near_gimbal_lock():
    for beta in (np.pi / 2 - 1e-9, -np.pi / 2 + 1e-9):
        r = _oracle_rotation([0.3, beta, -0.4])
        assert np.abs(euler_to_rotation(rotation_to_euler(r)) - r).max() < 1e-6


# ---------------------------------------------------------------------------
# angle canonicalization
# ---------------------------------------------------------------------------

def test_canonicalize_range_and_matrix_invariance():
    rng = np.random.default_rng(19)
    for _ in range(500):
        angles = rng.uniform(-20.0, 20.0, size=3)
        wrapped = canonicalize_angles(angles)
        assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)
        assert np.abs(euler_to_rotation(wrapped) - euler_to_rotation(angles)).max() < 1e-9


def test_canonicalize_boundary():
    assert np.allclose(canonicalize_angles(np.array([np.pi, -np.pi, 3 * np.pi])), np.array([np.pi, np.pi, np.pi]))
    assert np.allclose(canonicalize_angles(np.zeros(3)), np.zeros(3))


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def test_quaternion_round_trip():
    rng = np.random.default_rng(23)
    for _ in range(500):
        r = euler_to_rotation(rng.uniform(-np.pi, np.pi, size=3))
        q = quaternion_from_rotation(r)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert q[0] >= 0.0
        assert np.abs(rotation_from_quaternion(q) - r).max() < 1e-9


def test_quaternion_identity():
    assert np.allclose(quaternion_from_rotation(np.eye(3)), np.array([1.0, 0.0, 0.0, 0.0]))


def test_rotation_from_unnormalized_quaternion():
    q = np.array([2.0, 0.0, 0.0, 0.0])
    assert np.allclose(rotation_from_quaternion(q), np.eye(3))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_principal_axis_point():
    intr = _intr()
    pose = CameraPose.identity()
    pix, depth, valid = project_point(np.array([0.0, 0.0, 2.0]), pose, intr)
    assert valid
    assert depth == pytest.approx(2.0)
    assert np.allclose(pix, [intr.cx, intr.cy])


def test_project_matches_scalar_oracle():
    rng = np.random.default_rng(29)
    intr = _intr()
    for _ in range(500):
        pose = CameraPose(rng.uniform(-0.5, 0.5, size=3), rng.uniform(-1.0, 1.0, size=3))
        point = rng.uniform(-1.0, 1.0, size=3) + np.array([0.0, 0.0, 4.0])
        expect_pix, expect_depth = _oracle_project(point, pose, intr)
        pix, depth, valid = project_point(point, pose, intr)
        assert valid
        assert np.abs(pix - expect_pix).max() < 1e-9
        assert abs(depth - expect_depth) < 1e-12


def test_project_points_vectorized_agrees_with_single():
    rng = np.random.default_rng(31)
    intr = _intr()
    pose = CameraPose(rng.uniform(-0.4, 0.4, size=3), rng.uniform(-0.5, 0.5, size=3))
    pts = rng.uniform(-1.0, 1.0, size=(64, 3)) + np.array([0.0, 0.0, 5.0])
    pix, depth, valid = project_points(pts, pose, intr)
    for i in range(len(pts)):
        p1, d1, v1 = project_point(pts[i], pose, intr)
        assert v1 and valid[i]
        assert np.allclose(pix[i], p1) and depth[i] == pytest.approx(d1)


def test_point_behind_camera_is_culled():
    intr = _intr()
    pose = CameraPose.identity()
    _, _, valid = project_point(np.array([0.0, 0.0, -1.0]), pose, intr)
    assert not valid
    _, _, valid_eps = project_point(np.array([0.0, 0.0, DEPTH_EPS / 2]), pose, intr)
    assert not valid_eps


def test_backproject_round_trip():
    rng = np.random.default_rng(37)
    intr = _intr()
    for _ in range(1000):
        pose = CameraPose(rng.uniform(-0.6, 0.6, size=3), rng.uniform(-1.0, 1.0, size=3))
        point = rng.uniform(-2.0, 2.0, size=3) + np.array([0.0, 0.0, 6.0])
        pix, depth, valid = project_point(point, pose, intr)
        if not valid:
            continue
        back = backproject(pix, depth, pose, intr)
        assert np.abs(back - point).max() < 1e-9


def test_projection_jacobian_matches_finite_differences():
    rng = np.random.default_rng(41)
    intr = _intr()
    for _ in range(300):
        pose = CameraPose(rng.uniform(-0.5, 0.5, size=3), rng.uniform(-0.5, 0.5, size=3))
        point = rng.uniform(-1.0, 1.0, size=3) + np.array([0.0, 0.0, 4.0])
        jac = projection_jacobian(point, pose, intr)
        fd = _fd_projection_jacobian(point, pose, intr)
        denom = np.maximum(np.abs(fd), 1e-3)
        assert (np.abs(jac - fd) / denom).max() < 1e-4


def test_projection_jacobians_vectorized_agrees_with_single():
    rng = np.random.default_rng(43)
    intr = _intr()
    pose = CameraPose(rng.uniform(-0.4, 0.4, size=3), rng.uniform(-0.5, 0.5, size=3))
    pts = rng.uniform(-1.0, 1.0, size=(32, 3)) + np.array([0.0, 0.0, 5.0])
    jacs = projection_jacobians(pts, pose, intr)
    for i in range(len(pts)):
        assert np.abs(jacs[i] - projection_jacobian(pts[i], pose, intr)).max() < 1e-12


def test_perspective_jacobian_matches_finite_differences():
    rng = np.random.default_rng(47)
    intr = _intr()
    pc = rng.uniform(-1.0, 1.0, size=(20, 3)) + np.array([0.0, 0.0, 3.0])
    jac = perspective_jacobian(pc, intr)
    h = 1e-6
    for i in range(len(pc)):
        for k in range(3):
            hi = pc[i].copy()
            lo = pc[i].copy()
            hi[k] += h
            lo[k] -= h
            fu = np.array([intr.fx * hi[0] / hi[2] + intr.cx, intr.fy * hi[1] / hi[2] + intr.cy])
            fl = np.array([intr.fx * lo[0] / lo[2] + intr.cx, intr.fy * lo[1] / lo[2] + intr.cy])
            assert np.abs(jac[i, :, k] - (fu - fl) / (2 * h)).max() < 1e-4


# ---------------------------------------------------------------------------
# pose container
# ---------------------------------------------------------------------------

def test_pose_matrix_and_center():
    rng = np.random.default_rng(53)
    pose = CameraPose(rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3))
    m = pose.matrix
    assert m.shape == (4, 4)
    assert np.allclose(m[:3, :3], pose.rotation)
    assert np.allclose(m[:3, 3], pose.translation)
    assert np.allclose(m[3], [0, 0, 0, 1])
    # the camera center is the null point of the world->camera map
    pc = pose.rotation @ pose.camera_center + pose.translation
    assert np.abs(pc).max() < 1e-12


def test_pose_from_rt_round_trip():
    rng = np.random.default_rng(59)
    r = euler_to_rotation(rng.uniform(-np.pi, np.pi, size=3))
    t = rng.uniform(-1, 1, size=3)
    pose = CameraPose.from_rt(r, t)
    assert np.abs(pose.rotation - r).max() < 1e-9
    assert np.allclose(pose.translation, t)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=8, height=8)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=0, height=8)
