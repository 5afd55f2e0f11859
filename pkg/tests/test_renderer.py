"""Differentiable splat renderer: projection, compositing, gradients."""
import numpy as np
import pytest

from helpers import (
    fd_cloud_gradients,
    gradcheck_scene,
    random_cloud,
    relative_gradient_error,
    small_intrinsics,
)
from splatpose.cloud import GaussianCloud, logit, sigmoid
from splatpose.geometry import CameraPose, euler_to_rotation
from splatpose.renderer import (
    ALPHA_CLAMP,
    COV2D_DILATION,
    TRUNCATION_Q,
    project_gaussians,
    render,
    render_backward,
)


# ---------------------------------------------------------------------------
# independent forward oracle (scalar math, numpy inverse instead of conics)
# ---------------------------------------------------------------------------

def _oracle_quat_matrix(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _oracle_alpha_map(cloud, i, pose, intr):
    """Per-pixel contribution a(px) of one gaussian, EWA projected."""
    rc = euler_to_rotation(pose.angles)
    pc = rc @ cloud.positions[i] + pose.translation
    mean2d = np.array(
        [intr.fx * pc[0] / pc[2] + intr.cx, intr.fy * pc[1] / pc[2] + intr.cy]
    )
    rq = _oracle_quat_matrix(cloud.rotations[i])
    sig_w = rq @ np.diag(np.exp(2 * cloud.log_scales[i])) @ rq.T
    sig_c = rc @ sig_w @ rc.T
    j = np.array(
        [
            [intr.fx / pc[2], 0.0, -intr.fx * pc[0] / pc[2] ** 2],
            [0.0, intr.fy / pc[2], -intr.fy * pc[1] / pc[2] ** 2],
        ]
    )
    cov2d = j @ sig_c @ j.T + COV2D_DILATION * np.eye(2)
    inv = np.linalg.inv(cov2d)
    alpha = float(sigmoid(np.array([cloud.opacity_logits[i]]))[0])
    amap = np.zeros((intr.height, intr.width))
    for v in range(intr.height):
        for u in range(intr.width):
            d = np.array([u, v]) - mean2d
            q = d @ inv @ d
            if q > TRUNCATION_Q:
                continue
            amap[v, u] = min(alpha * np.exp(-0.5 * q), ALPHA_CLAMP)
    return amap


def _oracle_composite(cloud, pose, intr):
    """Manual front-to-back blend over per-gaussian alpha maps."""
    rc = euler_to_rotation(pose.angles)
    depths = cloud.positions @ rc.T[:, 2] + pose.translation[2]
    order = np.argsort(depths, kind="stable")
    img = np.zeros((intr.height, intr.width, 3))
    t = np.ones((intr.height, intr.width))
    for i in order:
        a = _oracle_alpha_map(cloud, i, pose, intr)
        img += (t * a)[:, :, None] * cloud.colors[i]
        t = t * (1.0 - a)
    return img, 1.0 - t


def _single(position, log_scale, quat, opacity, color):
    return GaussianCloud(
        np.array([position]),
        np.array([log_scale]),
        np.array([quat]),
        np.array([opacity]),
        np.array([color]),
    )


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def test_single_gaussian_matches_analytic_oracle():
    rng = np.random.default_rng(101)
    intr = small_intrinsics()
    pose = CameraPose(np.array([0.05, -0.03, 0.1]), np.array([0.02, -0.01, 0.0]))
    for _ in range(10):
        cloud = random_cloud(rng, 1)
        res = render(cloud, pose, intr)
        amap = _oracle_alpha_map(cloud, 0, pose, intr)
        expect = amap[:, :, None] * cloud.colors[0]
        assert np.abs(res.image - expect).max() < 1e-9
        assert np.abs(res.alpha - amap).max() < 1e-9


def test_multi_gaussian_compositing_matches_manual_blend():
    rng = np.random.default_rng(103)
    intr = small_intrinsics()
    pose = CameraPose.identity()
    cloud = random_cloud(rng, 6)
    res = render(cloud, pose, intr)
    img, alpha = _oracle_composite(cloud, pose, intr)
    assert np.abs(res.image - img).max() < 1e-9
    assert np.abs(res.alpha - alpha).max() < 1e-9


def test_opaque_full_frame_gaussian_center_color():
    intr = small_intrinsics()
    cloud = _single([0.0, 0.0, 2.0], np.log([2.0, 2.0, 2.0]), [1, 0, 0, 0], 12.0, [1.0, 0.0, 0.0])
    res = render(cloud, CameraPose.identity(), intr)
    center = res.image[intr.height // 2, intr.width // 2]
    assert np.abs(center - np.array([1.0, 0.0, 0.0])).max() < 1e-3


def test_depth_ordering_occlusion():
    intr = small_intrinsics()
    near = _single([0.0, 0.0, 2.0], np.log([2.0, 2.0, 2.0]), [1, 0, 0, 0], 10.0, [0.0, 1.0, 0.0])
    far = _single([0.0, 0.0, 4.0], np.log([0.6, 0.6, 0.6]), [1, 0, 0, 0], 10.0, [1.0, 0.0, 0.0])
    cloud = GaussianCloud.concatenate([far, near])
    res = render(cloud, CameraPose.identity(), intr)
    center = res.image[intr.height // 2, intr.width // 2]
    assert center[1] > 0.99 and center[0] < 1e-3
    # the hidden gaussian keeps a residual via the transmittance tail only
    assert res.visibility[1] > 0.9
    assert res.visibility[0] < 0.05


def test_behind_camera_gaussian_culled():
    intr = small_intrinsics()
    cloud = _single([0.0, 0.0, -2.0], np.log([0.3] * 3), [1, 0, 0, 0], 5.0, [1.0, 1.0, 1.0])
    res = render(cloud, CameraPose.identity(), intr)
    assert np.all(res.image == 0.0)
    assert res.visibility[0] == 0.0
    assert not res.projected.valid[0]


def test_offscreen_gaussian_culled():
    intr = small_intrinsics()
    cloud = _single([50.0, 0.0, 2.0], np.log([0.1] * 3), [1, 0, 0, 0], 5.0, [1, 1, 1])
    res = render(cloud, CameraPose.identity(), intr)
    assert np.all(res.image == 0.0)
    assert res.visibility[0] == 0.0


def test_empty_scene_black_with_zero_alpha():
    intr = small_intrinsics()
    cloud = _single([0.0, 0.0, -1.0], np.log([0.1] * 3), [1, 0, 0, 0], 0.0, [1, 1, 1])
    res = render(cloud, CameraPose.identity(), intr)
    assert np.all(res.image == 0.0)
    assert np.all(res.alpha == 0.0)
    assert res.alpha.shape == (intr.height, intr.width)


def test_alpha_map_in_unit_range():
    rng = np.random.default_rng(107)
    intr = small_intrinsics()
    cloud = random_cloud(rng, 12, opacity=(0.5, 0.97))
    res = render(cloud, CameraPose.identity(), intr)
    assert res.alpha.min() >= 0.0
    assert res.alpha.max() <= 1.0
    assert res.image.min() >= 0.0


def test_truncation_exactly_zero_beyond_three_sigma():
    intr = small_intrinsics(size=32)
    cloud = _single([0.0, 0.0, 3.0], np.log([0.05] * 3), [1, 0, 0, 0], 8.0, [1, 1, 1])
    res = render(cloud, CameraPose.identity(), intr)
    proj = project_gaussians(cloud, CameraPose.identity(), intr)
    a00, a01, a11 = proj.conic[0]
    uu, vv = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dx = uu - proj.mean2d[0, 0]
    dy = vv - proj.mean2d[0, 1]
    q = a00 * dx * dx + 2 * a01 * dx * dy + a11 * dy * dy
    outside = q > TRUNCATION_Q
    assert outside.any() and (~outside).any()
    assert np.all(res.image[outside] == 0.0)
    assert np.all(res.image[~outside].sum(axis=-1) > 0.0)


def test_dilation_floors_small_gaussians():
    intr = small_intrinsics()
    cloud = _single([0.0, 0.0, 2.0], np.log([1e-4] * 3), [1, 0, 0, 0], 3.0, [1, 1, 1])
    proj = project_gaussians(cloud, CameraPose.identity(), intr)
    cov = np.array([[proj.cov2d[0, 0], proj.cov2d[0, 1]], [proj.cov2d[0, 1], proj.cov2d[0, 2]]])
    eigvals = np.linalg.eigvalsh(cov)
    assert eigvals.min() >= COV2D_DILATION - 1e-12


def test_projection_depth_matches_camera_frame():
    rng = np.random.default_rng(109)
    intr = small_intrinsics()
    pose = CameraPose(rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.2, 0.2, 3))
    cloud = random_cloud(rng, 5)
    proj = project_gaussians(cloud, pose, intr)
    pc = cloud.positions @ pose.rotation.T + pose.translation
    assert np.abs(proj.depth - pc[:, 2]).max() < 1e-12


def test_render_is_deterministic():
    rng = np.random.default_rng(113)
    intr = small_intrinsics()
    cloud = random_cloud(rng, 10)
    a = render(cloud, CameraPose.identity(), intr)
    b = render(cloud, CameraPose.identity(), intr)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.visibility.tobytes() == b.visibility.tobytes()


def test_visibility_is_max_blend_weight():
    rng = np.random.default_rng(127)
    intr = small_intrinsics()
    cloud = random_cloud(rng, 4)
    res = render(cloud, CameraPose.identity(), intr)
    # manual recompute of max_px a_i(px) * T_i(px) from oracle alpha maps
    rc = euler_to_rotation(np.zeros(3))
    depths = cloud.positions[:, 2]
    order = np.argsort(depths, kind="stable")
    t = np.ones((intr.height, intr.width))
    expect = np.zeros(len(cloud))
    for i in order:
        a = _oracle_alpha_map(cloud, i, CameraPose.identity(), intr)
        expect[i] = (a * t).max()
        t = t * (1 - a)
    assert np.abs(res.visibility - expect).max() < 1e-9


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def test_zero_upstream_gradient_gives_zero_parameter_gradients():
    cloud, pose, intr = gradcheck_scene(1)
    fwd = render(cloud, pose, intr)
    grads = render_backward(cloud, pose, intr, np.zeros((intr.height, intr.width, 3)), fwd)
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
        assert np.all(getattr(grads, name) == 0.0)


def test_color_gradient_is_blend_weight_sum():
    # d image / d color is linear: FD with any step is exact up to roundoff
    cloud, pose, intr = gradcheck_scene(2, n=5)
    rng = np.random.default_rng(131)
    upstream = rng.normal(size=(intr.height, intr.width, 3))
    fwd = render(cloud, pose, intr)
    grads = render_backward(cloud, pose, intr, upstream, fwd)
    fd = fd_cloud_gradients(cloud, pose, intr, upstream, h=1e-3)
    assert np.abs(grads.colors - fd["colors"]).max() < 1e-6


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_all_parameter_gradients_match_finite_differences(seed):
    cloud, pose, intr = gradcheck_scene(seed, n=8)
    rng = np.random.default_rng(1000 + seed)
    upstream = rng.normal(size=(intr.height, intr.width, 3))
    fwd = render(cloud, pose, intr)
    grads = render_backward(cloud, pose, intr, upstream, fwd)
    fd = fd_cloud_gradients(cloud, pose, intr, upstream)
    scale = max(np.abs(fd[k]).max() for k in fd)
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
        analytic = getattr(grads, name)
        err = np.abs(analytic - fd[name])
        denom = np.maximum(np.maximum(np.abs(fd[name]), np.abs(analytic)), 1e-4 * scale)
        assert (err / denom).max() < 1e-2, name


def test_backward_reports_screen_gradient_norms():
    cloud, pose, intr = gradcheck_scene(6, n=4)
    rng = np.random.default_rng(137)
    upstream = rng.normal(size=(intr.height, intr.width, 3))
    fwd = render(cloud, pose, intr)
    grads = render_backward(cloud, pose, intr, upstream, fwd)
    assert grads.mean2d.shape == (4, 2)
    norms = np.linalg.norm(grads.mean2d, axis=1)
    assert np.all(norms >= 0.0) and norms.max() > 0.0
