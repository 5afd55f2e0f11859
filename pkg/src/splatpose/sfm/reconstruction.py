"""Incremental sparse reconstruction from unposed images.

Pipeline: detect keypoints, match all image pairs, verify each pair with an
essential-matrix RANSAC, chain the surviving correspondences into tracks,
bootstrap from the pair with the most inliers, then alternate PnP
registration of the next-best image with triangulation of newly observable
tracks. A robust bundle adjustment cleans up at the end and the result is
re-gauged so the lowest-index registered image sits exactly at the identity.

Feature detection can be bypassed by injecting keypoint positions and match
index pairs directly, which gives reconstruction tests exact correspondences
without exercising the detector.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..cloud import GaussianCloud, logit
from ..geometry import CameraIntrinsics, CameraPose, project_points
from .bundle import bundle_adjust
from .errors import InitializationError, InsufficientDataError, SfmError
from .features import detect_features
from .matching import match_features
from .model import SfmReconstruction
from .pnp import solve_pnp_ransac
from .triangulation import triangulate
from .two_view import estimate_essential_ransac, recover_pose

MIN_PAIR_INLIERS = 8
MIN_PNP_CORRESPONDENCES = 6
SEED_OPACITY = 0.1
# points re-checked after adjustment must keep half the parallax required at
# creation, otherwise pruning would thrash on the boundary
PRUNE_PARALLAX_DEG = 1.0
# a seed pair with lots of inliers but almost no baseline fixes the global
# scale from pure noise; demand real triangulation angles before accepting it
SEED_MIN_PARALLAX_DEG = 2.0
# adjustment is a polish, not a restructuring: under a narrow field of view
# the robust cost has a second basin with the scene blown up and nearly
# orthographic, and a step that rescales the camera layout this much has
# jumped basins rather than converged
MAX_ADJUST_SPREAD_GROWTH = 3.0


def build_tracks(n_keypoints: list[int], pair_matches: dict) -> list[list[tuple[int, int]]]:
    """Chain pairwise matches into multi-view tracks by union-find.

    Args:
        n_keypoints: keypoint count per image.
        pair_matches: (i, j) -> (M, 2) index pairs (keypoint in i, in j).

    Tracks that end up observing the same image through two different
    keypoints are contradictory and dropped whole. Result is deterministic:
    tracks sorted by their observation lists.
    """
    offsets = np.concatenate([[0], np.cumsum(n_keypoints)]).astype(np.int64)

    parent = np.arange(offsets[-1], dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for (i, j), corr in sorted(pair_matches.items()):
        for a, b in np.asarray(corr, dtype=np.int64):
            ra = find(offsets[i] + a)
            rb = find(offsets[j] + b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for node in range(len(parent)):
        groups.setdefault(find(node), []).append(node)

    image_of = np.searchsorted(offsets, np.arange(len(parent)), side="right") - 1
    tracks = []
    for members in groups.values():
        if len(members) < 2:
            continue
        obs = sorted((int(image_of[m]), int(m - offsets[image_of[m]])) for m in members)
        images = [i for i, _ in obs]
        if len(set(images)) != len(images):
            continue
        tracks.append(obs)
    tracks.sort()
    return tracks


def _detect_and_match(images, ratio):
    keypoints = []
    descriptors = []
    for image in images:
        kps = detect_features(image)
        keypoints.append(np.asarray([k.position for k in kps], dtype=float).reshape(-1, 2))
        descriptors.append(kps)
    pair_matches = {}
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            pair = match_features(descriptors[i], descriptors[j], ratio=ratio, image_a=i, image_b=j)
            if len(pair.correspondences):
                pair_matches[(i, j)] = pair.correspondences
    return keypoints, pair_matches


def _verify_pairs(keypoints, pair_matches, intr, iterations, threshold, seed):
    """Epipolar RANSAC per pair; returns (i, j) -> verified index pairs."""
    verified = {}
    inlier_counts = {}
    for (i, j), corr in sorted(pair_matches.items()):
        if len(corr) < MIN_PAIR_INLIERS:
            continue
        pix_a = keypoints[i][corr[:, 0]]
        pix_b = keypoints[j][corr[:, 1]]
        try:
            _, mask = estimate_essential_ransac(
                pix_a, pix_b, intr, iterations=iterations, threshold=threshold, seed=seed
            )
        except SfmError:
            continue
        if int(mask.sum()) < MIN_PAIR_INLIERS:
            continue
        verified[(i, j)] = corr[mask]
        inlier_counts[(i, j)] = int(mask.sum())
    return verified, inlier_counts


def _track_key(track) -> tuple:
    return tuple(track)


def _camera_spread(recon: SfmReconstruction) -> float:
    centers = np.array([p.camera_center for p in recon.poses.values()])
    return float(np.linalg.norm(np.ptp(centers, axis=0)))


def _adjustment_kept_gauge(before: SfmReconstruction, after: SfmReconstruction) -> bool:
    a = _camera_spread(before)
    b = _camera_spread(after)
    if a <= 1e-12 or b <= 1e-12:
        return True
    ratio = b / a
    return 1.0 / MAX_ADJUST_SPREAD_GROWTH <= ratio <= MAX_ADJUST_SPREAD_GROWTH


def _median_seed_parallax_deg(points, rel: CameraPose) -> float:
    """Median triangulation angle of a two-view seed (first camera at origin)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    a = pts / np.maximum(np.linalg.norm(pts, axis=1, keepdims=True), 1e-12)
    d = pts - rel.camera_center
    b = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
    cos = np.clip(np.sum(a * b, axis=1), -1.0, 1.0)
    return float(np.median(np.degrees(np.arccos(cos))))


def _unstable_point_indices(recon: SfmReconstruction) -> np.ndarray:
    """Indices of points behind any observing camera or with weak parallax.

    Bundle adjustment only guards depths at the observations it optimizes, so
    a pose refit can leave some other track's point behind a camera, and a
    point created right at the parallax gate can drift along its ray until
    its depth is meaningless. Both kinds poison the next adjustment round.
    """
    cos_limit = np.cos(np.radians(PRUNE_PARALLAX_DEG))
    bad = []
    for m, track in enumerate(recon.tracks):
        x = recon.points[m]
        rays = []
        behind = False
        for image, _ in track:
            pose = recon.poses.get(image)
            if pose is None:
                continue
            if float(pose.rotation[2] @ x + pose.translation[2]) <= 1e-9:
                behind = True
                break
            d = x - pose.camera_center
            n = np.linalg.norm(d)
            if n > 1e-12:
                rays.append(d / n)
        if behind:
            bad.append(m)
            continue
        narrowest = 1.0
        for a in range(len(rays)):
            for b in range(a + 1, len(rays)):
                narrowest = min(narrowest, float(rays[a] @ rays[b]))
        if narrowest > cos_limit:
            bad.append(m)
    return np.asarray(bad, dtype=np.int64)


class _Builder:
    """Mutable state for the incremental loop."""

    def __init__(self, keypoints, tracks, intr):
        self.keypoints = keypoints
        self.tracks = tracks
        self.intr = intr
        self.poses: dict[int, CameraPose] = {}
        self.point_of_track = np.full(len(tracks), -1, dtype=np.int64)
        self.points: list[np.ndarray] = []
        self.point_tracks: list[int] = []
        # image -> list of track ids observing it
        self.tracks_of_image: dict[int, list[int]] = {}
        for t, track in enumerate(tracks):
            for image, _ in track:
                self.tracks_of_image.setdefault(image, []).append(t)
        self.track_pixel = {}
        for t, track in enumerate(tracks):
            for image, kp in track:
                self.track_pixel[(t, image)] = keypoints[image][kp]

    def triangulate_ready_tracks(self):
        """Create points for tracks seen by >= 2 registered cameras."""
        for t, track in enumerate(self.tracks):
            if self.point_of_track[t] >= 0:
                continue
            obs = [
                (self.poses[image], self.intr, self.track_pixel[(t, image)])
                for image, _ in track
                if image in self.poses
            ]
            if len(obs) < 2:
                continue
            try:
                point = triangulate(obs)
            except SfmError:
                continue
            self.point_of_track[t] = len(self.points)
            self.points.append(point)
            self.point_tracks.append(t)

    def drop_points(self, indices) -> None:
        """Remove points by index; their tracks become eligible again."""
        doomed = set(int(i) for i in indices)
        if not doomed:
            return
        points = []
        point_tracks = []
        for p, (point, t) in enumerate(zip(self.points, self.point_tracks)):
            if p in doomed:
                self.point_of_track[t] = -1
                continue
            self.point_of_track[t] = len(points)
            points.append(point)
            point_tracks.append(t)
        self.points = points
        self.point_tracks = point_tracks

    def pnp_correspondences(self, image):
        point_idx = []
        pixels = []
        for t in self.tracks_of_image.get(image, []):
            p = self.point_of_track[t]
            if p >= 0:
                point_idx.append(p)
                pixels.append(self.track_pixel[(t, image)])
        return np.asarray(point_idx, dtype=np.int64), np.asarray(pixels, dtype=float).reshape(-1, 2)

    def to_reconstruction(self, reference: int) -> SfmReconstruction:
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        tracks = []
        for t in self.point_tracks:
            tracks.append([(i, k) for i, k in self.tracks[t] if i in self.poses])
        return SfmReconstruction(
            poses={i: p.copy() for i, p in self.poses.items()},
            points=points,
            colors=np.zeros((len(points), 3)),
            tracks=tracks,
            pixels={i: self.keypoints[i] for i in range(len(self.keypoints))},
            reference=reference,
        )


def _regauge_to(recon: SfmReconstruction, new_reference: int) -> SfmReconstruction:
    """Rigidly move the world frame onto the chosen camera.

    The new reference pose is written as an exact identity; every other pose
    and all points are mapped through the same rigid transform, which leaves
    reprojections unchanged up to roundoff.
    """
    ref = recon.poses[new_reference]
    r0 = ref.rotation
    t0 = ref.translation.copy()
    out = recon.copy()
    for i, pose in recon.poses.items():
        if i == new_reference:
            out.poses[i] = CameraPose.identity()
            continue
        ri = pose.rotation
        out.poses[i] = CameraPose.from_rt(ri @ r0.T, pose.translation - ri @ r0.T @ t0)
    out.points = recon.points @ r0.T + t0
    out.reference = new_reference
    return out


def _point_colors(recon: SfmReconstruction, images) -> np.ndarray:
    colors = np.zeros((recon.n_points, 3))
    for m, track in enumerate(recon.tracks):
        samples = []
        for image, kp in track:
            if image not in recon.poses or images[image] is None:
                continue
            img = images[image]
            u, v = recon.pixels[image][kp]
            col = int(np.clip(round(u), 0, img.shape[1] - 1))
            row = int(np.clip(round(v), 0, img.shape[0] - 1))
            samples.append(img[row, col])
        if samples:
            colors[m] = np.clip(np.mean(samples, axis=0), 0.0, 1.0)
        else:
            colors[m] = 0.5
    return colors


def run_initialization(
    images,
    intr: CameraIntrinsics,
    *,
    ratio: float = 0.8,
    ransac_iterations: int = 2048,
    ransac_threshold: float = 1.5,
    seed: int = 0,
    injected_keypoints=None,
    injected_matches=None,
) -> SfmReconstruction:
    """Recover camera poses and a seed point cloud from unposed images.

    Args:
        images: list of (H, W, 3) float arrays (entries may be None when
            keypoints are injected; colors then default to gray).
        intr: shared pinhole intrinsics.
        injected_keypoints: optional per-image (K, 2) pixel arrays replacing
            detection.
        injected_matches: optional (i, j) -> (M, 2) keypoint index pairs
            replacing descriptor matching; requires injected_keypoints.

    Raises:
        InitializationError: fewer than two images could be registered. The
            exception carries the indices that stayed unregistered.
    """
    n_images = len(images)
    if n_images < 2:
        raise InsufficientDataError("initialization needs at least two images")

    if injected_keypoints is not None:
        keypoints = [np.atleast_2d(np.asarray(k, dtype=float)) for k in injected_keypoints]
        pair_matches = {
            key: np.asarray(v, dtype=np.int64) for key, v in (injected_matches or {}).items()
        }
    else:
        keypoints, pair_matches = _detect_and_match(images, ratio)

    verified, inlier_counts = _verify_pairs(
        keypoints, pair_matches, intr, ransac_iterations, ransac_threshold, seed
    )
    if not verified:
        raise InitializationError(
            "no image pair survived epipolar verification",
            unregistered=range(n_images),
        )

    tracks = build_tracks([len(k) for k in keypoints], verified)
    builder = _Builder(keypoints, tracks, intr)

    # seed from the strongest pair; fall back to the next if decomposition
    # or triangulation fails on it, and skip low-parallax pairs while any
    # wider-baseline alternative is still untried
    ranked = sorted(inlier_counts, key=lambda key: (-inlier_counts[key], key))
    reference = None
    narrow = None
    for i, j in ranked:
        corr = verified[(i, j)]
        pix_a = keypoints[i][corr[:, 0]]
        pix_b = keypoints[j][corr[:, 1]]
        try:
            e, mask = estimate_essential_ransac(
                pix_a, pix_b, intr, iterations=ransac_iterations, threshold=ransac_threshold, seed=seed
            )
            rel = recover_pose(e, pix_a[mask], pix_b[mask], intr)
        except SfmError:
            continue
        builder.poses = {i: CameraPose.identity(), j: rel}
        builder.triangulate_ready_tracks()
        if len(builder.points) >= MIN_PNP_CORRESPONDENCES:
            if _median_seed_parallax_deg(builder.points, rel) >= SEED_MIN_PARALLAX_DEG:
                reference = i
                break
            if narrow is None:
                narrow = (i, j, rel)
        builder.poses = {}
        builder.point_of_track[:] = -1
        builder.points = []
        builder.point_tracks = []
    if reference is None and narrow is not None:
        i, j, rel = narrow
        builder.poses = {i: CameraPose.identity(), j: rel}
        builder.triangulate_ready_tracks()
        reference = i
    if reference is None:
        raise InitializationError(
            "no seed pair yielded a usable two-view reconstruction",
            unregistered=range(n_images),
        )

    failed = set()
    while True:
        remaining = [
            u for u in range(n_images) if u not in builder.poses and u not in failed
        ]
        if not remaining:
            break
        scored = []
        for u in remaining:
            point_idx, pixels = builder.pnp_correspondences(u)
            scored.append((len(point_idx), u, point_idx, pixels))
        scored.sort(key=lambda s: (-s[0], s[1]))
        count, u, point_idx, pixels = scored[0]
        if count < MIN_PNP_CORRESPONDENCES:
            failed.update(s[1] for s in scored)
            break
        try:
            pose, _ = solve_pnp_ransac(
                np.asarray(builder.points)[point_idx],
                pixels,
                intr,
                iterations=ransac_iterations,
                threshold=ransac_threshold,
                seed=seed,
            )
        except SfmError:
            failed.add(u)
            continue
        builder.poses[u] = pose
        builder.triangulate_ready_tracks()
        # light intermediate clean-up keeps PnP anchored as the model grows
        interim = builder.to_reconstruction(reference)
        try:
            adjusted = bundle_adjust(interim, intr, max_iterations=10)
        except SfmError:
            pass
        else:
            if _adjustment_kept_gauge(interim, adjusted):
                builder.poses = {k: p for k, p in adjusted.poses.items()}
                builder.points = [p for p in adjusted.points]
                builder.drop_points(_unstable_point_indices(adjusted))

    if len(builder.poses) < 2:
        raise InitializationError(
            "fewer than two images registered",
            unregistered=[u for u in range(n_images) if u not in builder.poses],
        )

    builder.drop_points(_unstable_point_indices(builder.to_reconstruction(reference)))
    recon = builder.to_reconstruction(reference)
    try:
        adjusted = bundle_adjust(recon, intr, max_iterations=50)
    except SfmError:
        pass
    else:
        if _adjustment_kept_gauge(recon, adjusted):
            recon = adjusted
    # the final adjustment can itself walk a boundary point out along its
    # ray, so the stability check has to run once more on its output
    bad = _unstable_point_indices(recon)
    if bad.size:
        keep = np.setdiff1d(np.arange(len(recon.points)), bad)
        recon.points = recon.points[keep]
        recon.colors = recon.colors[keep]
        recon.tracks = [recon.tracks[m] for m in keep]
    recon = _regauge_to(recon, min(recon.poses))
    recon.colors = _point_colors(recon, images)
    return recon


def seed_gaussians(recon: SfmReconstruction, intr: CameraIntrinsics) -> GaussianCloud:
    """Initial Gaussian cloud from a sparse reconstruction.

    Isotropic scale is the mean distance to each point's three nearest
    neighbors, opacity starts low so early optimization can prune freely, and
    colors come from the mean of the observing pixels (already stored on the
    reconstruction).
    """
    points = recon.points
    colors = np.asarray(recon.colors, dtype=float)
    if len(points) == 0:
        raise InsufficientDataError("reconstruction has no points to seed from")
    # bundle adjustment lets sub-degree-parallax points drift toward infinity
    # while their reprojection stays small; a gaussian out there contributes
    # to no view but wrecks every extent-derived heuristic downstream
    center = np.median(points, axis=0)
    radius = np.linalg.norm(points - center, axis=1)
    keep = radius <= 50.0 * max(float(np.median(radius)), 1e-12)
    if keep.any() and not keep.all():
        points, colors = points[keep], colors[keep]
    n = len(points)
    if n >= 4:
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=4)
        mean_nn = dist[:, 1:].mean(axis=1)
    else:
        extent = np.linalg.norm(points.max(axis=0) - points.min(axis=0)) if n > 1 else 1.0
        mean_nn = np.full(n, max(extent / 2.0, 1e-3))
    mean_nn = np.maximum(mean_nn, 1e-6)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        positions=points.copy(),
        log_scales=np.log(mean_nn)[:, None].repeat(3, axis=1),
        rotations=rotations,
        opacity_logits=np.full(n, float(logit(SEED_OPACITY))),
        colors=np.clip(colors, 0.0, 1.0),
    )
