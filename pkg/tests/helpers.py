"""Shared fixtures-in-code for the test suite: scene builders and FD oracles."""
import numpy as np

from splatpose.cloud import GaussianCloud, sigmoid
from splatpose.geometry import CameraIntrinsics, CameraPose, euler_to_rotation


def small_intrinsics(size=24, focal=30.0):
    return CameraIntrinsics(
        fx=focal, fy=focal, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0, width=size, height=size
    )


def random_cloud(rng, n, z_near=2.0, z_step=0.15, focal=30.0, half_extent=0.3,
                 sigma_px=(1.5, 4.0), opacity=(0.15, 0.85)):
    """Random scene with construction-time depth gaps (no sort ties under FD)."""
    depths = z_near + z_step * rng.permutation(n) + rng.uniform(-0.01, 0.01, size=n)
    positions = np.empty((n, 3))
    positions[:, 2] = depths
    positions[:, 0] = rng.uniform(-half_extent, half_extent, size=n) * depths
    positions[:, 1] = rng.uniform(-half_extent, half_extent, size=n) * depths
    sig_world = rng.uniform(*sigma_px, size=(n, 3)) * depths[:, None] / focal
    sig_world *= rng.uniform(0.7, 1.3, size=(n, 3))
    log_scales = np.log(sig_world)
    quats = rng.normal(size=(n, 4))
    logits = np.log(1.0 / rng.uniform(*opacity, size=n) - 1.0) * -1.0
    colors = rng.uniform(0.1, 0.9, size=(n, 3))
    return GaussianCloud(positions, log_scales, quats, logits, colors)


def scene_is_gradcheck_safe(cloud, pose, intr, q_margin=5e-3, alpha_limit=0.99):
    """Reject scenes where finite differencing could cross a truncation or
    clamp boundary: every in-box pixel must keep a margin from q = 9 and the
    per-pixel contribution must stay below the compositing clamp."""
    from splatpose.renderer import TRUNCATION_Q, project_gaussians

    proj = project_gaussians(cloud, pose, intr)
    if not np.all(proj.valid):
        return False
    alphas = sigmoid(cloud.opacity_logits)
    for i in range(len(cloud)):
        x0, x1, y0, y1 = proj.bbox[i]
        if x0 >= x1 or y0 >= y1:
            return False  # want every gaussian exercised
        a00, a01, a11 = proj.conic[i]
        uu, vv = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
        dx = uu - proj.mean2d[i, 0]
        dy = vv - proj.mean2d[i, 1]
        q = a00 * dx * dx + 2 * a01 * dx * dy + a11 * dy * dy
        if np.abs(q - TRUNCATION_Q).min() < q_margin:
            return False
        inside = q < TRUNCATION_Q
        if np.any(inside) and (alphas[i] * np.exp(-0.5 * q[inside])).max() > alpha_limit:
            return False
    return True


def gradcheck_scene(seed, n=8, size=24):
    """First safe random scene from a deterministic sub-seed walk."""
    intr = small_intrinsics(size=size)
    pose = CameraPose.identity()
    for sub in range(200):
        rng = np.random.default_rng([seed, sub])
        cloud = random_cloud(rng, n)
        if scene_is_gradcheck_safe(cloud, pose, intr):
            return cloud, pose, intr
    raise RuntimeError("no gradcheck-safe scene found")


def fd_cloud_gradients(cloud, pose, intr, upstream, h=1e-4):
    """Central finite differences of sum(render * upstream) over every
    Gaussian parameter. Independent oracle for the analytic backward pass."""
    from splatpose.renderer import render

    def loss_for(c):
        return float(np.sum(render(c, pose, intr).image * upstream))

    grads = {}
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
        arr = getattr(cloud, name)
        g = np.zeros_like(arr)
        flat_idx = list(np.ndindex(arr.shape))
        for idx in flat_idx:
            c_hi = cloud.copy()
            c_lo = cloud.copy()
            # bypass quaternion renormalization in the container: perturb raw
            getattr(c_hi, name)[idx] = arr[idx] + h
            getattr(c_lo, name)[idx] = arr[idx] - h
            g[idx] = (loss_for(c_hi) - loss_for(c_lo)) / (2.0 * h)
        grads[name] = g
    return grads


def relative_gradient_error(analytic, fd, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), floor)
    return (np.abs(analytic - fd) / denom).max()


def textured_scene(seed, n=250, size=64, focal=70.0, depth=(3.0, 5.0),
                   opacity=(0.85, 0.98), sigma_px=(1.2, 2.8), color=(0.05, 0.95)):
    """Colorful speckle field facing the camera: good photometric texture."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(*depth, size=n)
    half = 0.42 * z
    positions = np.column_stack(
        [rng.uniform(-1.0, 1.0, size=n) * half, rng.uniform(-1.0, 1.0, size=n) * half, z]
    )
    sig_world = rng.uniform(*sigma_px, size=(n, 3)) * z[:, None] / focal
    logits = np.log(1.0 / rng.uniform(*opacity, size=n) - 1.0) * -1.0
    cloud = GaussianCloud(
        positions,
        np.log(sig_world),
        rng.normal(size=(n, 4)),
        logits,
        rng.uniform(*color, size=(n, 3)),
    )
    intr = small_intrinsics(size=size, focal=focal)
    return cloud, intr


def photometric_template(cloud, pose, intr):
    """Template cloud whose colors equal the rendered image sampled at each
    projected center, making `pose` an exact minimum of the photometric
    residual. Lets refiner tests exercise the warp/solver math without the
    blending mismatch a semi-transparent speckle field would introduce.

    Returns (template cloud, target image, visibility at `pose`)."""
    from splatpose.geometry import project_points
    from splatpose.image import sample_bilinear_many
    from splatpose.renderer import render

    res = render(cloud, pose, intr)
    img = np.clip(res.image, 0.0, 1.0)
    pix, _, in_front = project_points(cloud.positions, pose, intr)
    safe = np.where(np.isfinite(pix), pix, -1.0)
    sampled, in_bounds = sample_bilinear_many(img, safe)
    tpl = cloud.copy()
    ok = in_front & in_bounds
    tpl.colors = np.where(ok[:, None], sampled, tpl.colors)
    return tpl, img, res.visibility


def scene_extent(cloud):
    span = cloud.positions.max(axis=0) - cloud.positions.min(axis=0)
    return float(np.linalg.norm(span))


def perturb_pose(pose, rng, rot_deg, trans_dist):
    """Offset each Euler angle within +-rot_deg and move the translation by
    trans_dist along a random direction."""
    angles = pose.angles + np.deg2rad(rng.uniform(-rot_deg, rot_deg, size=3))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    from splatpose.geometry import CameraPose

    return CameraPose(angles, pose.translation + trans_dist * direction)


def pose_errors(estimated, reference):
    """(rotation error deg, translation error) between two poses."""
    r_rel = estimated.rotation @ reference.rotation.T
    ang = np.arccos(np.clip((np.trace(r_rel) - 1.0) / 2.0, -1.0, 1.0))
    return np.degrees(ang), float(np.linalg.norm(estimated.translation - reference.translation))


def euler_pose_lookat(center, target, up=(0.0, 1.0, 0.0)):
    """World->camera pose for a camera at `center` looking at `target`."""
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(np.asarray(up, dtype=float), fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along up: pick any perpendicular
        right = np.cross(np.array([1.0, 0.0, 0.0]), fwd)
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return CameraPose.from_rt(r, -r @ center)
