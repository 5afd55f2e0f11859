"""Descriptor matching: mutual nearest neighbor plus Lowe's ratio test."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MatchPair:
    image_a: int
    image_b: int
    correspondences: np.ndarray  # (M, 2) keypoint indices into a and b
    inlier_mask: np.ndarray  # (M,) bool, refined later by robust estimation

    def inliers(self) -> np.ndarray:
        return self.correspondences[self.inlier_mask]


def _descriptor_matrix(kps) -> np.ndarray:
    if len(kps) == 0:
        return np.zeros((0, 1))
    return np.stack([k.descriptor for k in kps])


def _empty_pair(image_a, image_b) -> MatchPair:
    return MatchPair(image_a, image_b, np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=bool))


def match_features(a, b, ratio: float = 0.8, image_a: int = 0, image_b: int = 1) -> MatchPair:
    """Matches passing both the ratio test and a mutual-nearest check.

    Raises:
        ValueError: ratio outside (0, 1).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly inside (0, 1)")
    if len(a) == 0 or len(b) == 0:
        return _empty_pair(image_a, image_b)
    da = _descriptor_matrix(a)
    db = _descriptor_matrix(b)
    d2 = np.maximum(
        np.sum(da**2, axis=1)[:, None] + np.sum(db**2, axis=1)[None, :] - 2.0 * da @ db.T, 0.0
    )
    nearest_b = np.argmin(d2, axis=1)
    nearest_a = np.argmin(d2, axis=0)
    rows = []
    for i, j in enumerate(nearest_b):
        if nearest_a[j] != i:
            continue
        best = np.sqrt(d2[i, j])
        if len(b) >= 2:
            second = np.sqrt(np.partition(d2[i], 1)[1])
            if not best < ratio * second:
                continue
        rows.append((i, int(j)))
    corr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return MatchPair(image_a, image_b, corr, np.ones(len(corr), dtype=bool))
