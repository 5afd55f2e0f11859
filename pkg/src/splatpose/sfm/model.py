"""Shared sparse-reconstruction container.

A reconstruction couples registered camera poses with a sparse point cloud
and the bookkeeping that ties every point back to the pixel measurements it
was triangulated from. Keypoint pixel positions are stored per image so the
structure is self-contained for reprojection-based refinement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraPose


@dataclass
class SfmReconstruction:
    """Poses, points, and the observation graph linking them.

    Attributes:
        poses: image index -> world-to-camera pose for registered images.
        points: (M, 3) triangulated positions.
        colors: (M, 3) per-point color in [0, 1].
        tracks: per point, list of (image index, keypoint index) observations.
        pixels: image index -> (K, 2) keypoint pixel positions.
        reference: index of the gauge-fixing image whose pose is identity.
    """

    poses: dict[int, CameraPose]
    points: np.ndarray
    colors: np.ndarray
    tracks: list[list[tuple[int, int]]]
    pixels: dict[int, np.ndarray] = field(default_factory=dict)
    reference: int = 0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=float))

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def registered(self) -> list[int]:
        return sorted(self.poses)

    def observation_pixel(self, image: int, keypoint: int) -> np.ndarray:
        return self.pixels[image][keypoint]

    def copy(self) -> "SfmReconstruction":
        return SfmReconstruction(
            poses={i: p.copy() for i, p in self.poses.items()},
            points=self.points.copy(),
            colors=self.colors.copy(),
            tracks=[list(t) for t in self.tracks],
            pixels={i: p.copy() for i, p in self.pixels.items()},
            reference=self.reference,
        )
