"""Seeded synthetic scenes for end-to-end verification.

A scene is a procedurally sampled Gaussian cloud plus a ring of inward-facing
cameras and the images rendered from them. Everything is a pure function of
the spec, so two runs with the same seed agree bit for bit; with zero noise
the returned images are exactly what the renderer produces from the returned
cloud and poses, which gives downstream stages a known global optimum.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .cloud import GaussianCloud, logit
from .geometry import CameraIntrinsics, CameraPose
from .renderer import render

GOLDEN_ANGLE = 2.399963229728653  # decorrelates elevation from azimuth


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs of the generator. `texture` scales color contrast (0 renders a
    uniform gray cloud), `noise` is the sigma of additive pixel noise applied
    after rendering."""

    gaussians: int = 300
    size: int = 64
    views: int = 8
    orbit_radius: float = 4.0
    orbit_arc: float = 0.3  # radians of azimuth swept by the camera ring
    orbit_tilt: float = 0.08  # peak elevation excursion, radians
    texture: float = 1.0
    noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.gaussians < 1:
            raise ValueError("gaussians must be at least 1")
        if self.views < 1:
            raise ValueError("views must be at least 1")
        if self.size < 8:
            raise ValueError("size must be at least 8")
        if self.orbit_radius <= 0.0:
            raise ValueError("orbit_radius must be positive")
        if self.noise < 0.0 or self.texture < 0.0:
            raise ValueError("noise and texture must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSceneSpec":
        """Spec from a comma-separated key=value string, e.g.
        "views=8,gaussians=300,size=64,seed=2"."""
        types = {f.name: f.type for f in fields(cls)}
        updates = {}
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            if "=" not in item:
                raise ValueError(f"expected key=value, got {item!r}")
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in types:
                raise ValueError(f"unknown synthetic-scene key {key!r}")
            caster = int if types[key] == "int" else float
            try:
                updates[key] = caster(value.strip())
            except ValueError:
                raise ValueError(f"bad value for {key!r}: {value.strip()!r}") from None
        return replace(cls(), **updates)


@dataclass
class SyntheticScene:
    cloud: GaussianCloud
    poses: list
    intrinsics: CameraIntrinsics
    images: list


def _lookat(center: np.ndarray, target: np.ndarray) -> CameraPose:
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(np.array([0.0, 1.0, 0.0]), fwd)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        right = np.cross(np.array([1.0, 0.0, 0.0]), fwd)
        norm = np.linalg.norm(right)
    right = right / norm
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return CameraPose.from_rt(r, -r @ center)


def _sample_cloud(spec: SyntheticSceneSpec, rng: np.random.Generator) -> GaussianCloud:
    n = spec.gaussians
    # lateral extent sized so the cloud fills most of the frame from the orbit
    half = 0.36 * spec.orbit_radius
    positions = rng.uniform(-1.0, 1.0, (n, 3)) * half
    positions[:, 2] *= 0.5  # shallower along the viewing axis
    # footprints pinned in pixels at the orbit distance: a sharp speckle field
    # gives feature detection and photometric alignment something to grip
    focal = 1.25 * spec.size
    sigma_px = rng.uniform(1.2, 2.8, (n, 3))
    log_scales = np.log(sigma_px * spec.orbit_radius / focal)
    rotations = rng.normal(size=(n, 4))
    opacity_logits = logit(rng.uniform(0.85, 0.98, n))
    colors = np.clip(0.5 + spec.texture * rng.uniform(-0.45, 0.45, (n, 3)), 0.0, 1.0)
    return GaussianCloud(positions, log_scales, rotations, opacity_logits, colors)


def _orbit_poses(spec: SyntheticSceneSpec, target: np.ndarray) -> list:
    poses = []
    for k in range(spec.views):
        frac = k / (spec.views - 1.0) if spec.views > 1 else 0.5
        azimuth = spec.orbit_arc * (2.0 * frac - 1.0)
        elevation = spec.orbit_tilt * np.sin(GOLDEN_ANGLE * k)
        direction = np.array(
            [
                np.sin(azimuth) * np.cos(elevation),
                np.sin(elevation),
                -np.cos(azimuth) * np.cos(elevation),
            ]
        )
        poses.append(_lookat(target + spec.orbit_radius * direction, target))
    return poses


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> SyntheticScene:
    """Sample a cloud, place cameras on an orbit facing its centroid, and
    render every view. Deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cloud = _sample_cloud(spec, rng)
    centroid = cloud.positions.mean(axis=0)
    poses = _orbit_poses(spec, centroid)
    focal = 1.25 * spec.size
    half = spec.size / 2.0
    intr = CameraIntrinsics(focal, focal, half, half, spec.size, spec.size)
    images = [render(cloud, pose, intr).image for pose in poses]
    if spec.noise > 0.0:
        images = [
            np.clip(im + rng.normal(scale=spec.noise, size=im.shape), 0.0, 1.0)
            for im in images
        ]
    return SyntheticScene(cloud, poses, intr, images)
