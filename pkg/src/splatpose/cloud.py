"""Gaussian scene container: struct-of-arrays over N primitives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable on both tails
    out = np.empty_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p / (1.0 - p))


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """Batch quaternion (N, 4) wxyz -> rotation matrices (N, 3, 3); normalizes."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class GaussianCloud:
    """N Gaussians: positions, anisotropic log-scales, unit quaternions (wxyz),
    opacity logits, and base RGB colors in [0, 1]."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float)).copy()
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n, 3).copy()
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 4).copy()
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n).copy()
        self.colors = np.asarray(self.colors, dtype=float).reshape(n, 3).copy()
        self.normalize_rotations()

    def __len__(self) -> int:
        return len(self.positions)

    def normalize_rotations(self):
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero-norm quaternion")
        self.rotations /= norms

    def validate(self):
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0).max() > 1e-6:
            raise ValueError("quaternions drifted off the unit sphere")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise ValueError("colors must lie in [0, 1]")

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        """World-frame 3x3 covariances R diag(exp(2 log_s)) R^T."""
        r = quaternions_to_matrices(self.rotations)
        s2 = np.exp(2.0 * self.log_scales)
        return np.einsum("nij,nj,nkj->nik", r, s2, r)

    @classmethod
    def _from_valid(cls, positions, log_scales, rotations, opacity_logits, colors):
        # structural ops on already-valid clouds must be byte-preserving, so
        # skip the constructor's re-normalization
        obj = object.__new__(cls)
        obj.positions = positions
        obj.log_scales = log_scales
        obj.rotations = rotations
        obj.opacity_logits = opacity_logits
        obj.colors = colors
        return obj

    def copy(self) -> "GaussianCloud":
        return GaussianCloud._from_valid(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
        )

    def subset(self, index: np.ndarray) -> "GaussianCloud":
        return GaussianCloud._from_valid(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.colors[index],
        )

    @classmethod
    def concatenate(cls, clouds) -> "GaussianCloud":
        return cls._from_valid(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.log_scales for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.opacity_logits for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
        )
