"""Seeded synthetic scene generation."""
import numpy as np
import pytest

from splatpose.geometry import project_point
from splatpose.renderer import render
from splatpose.synthetic import SyntheticSceneSpec, generate_synthetic_scene


def test_same_seed_reproduces_everything_bit_for_bit():
    spec = SyntheticSceneSpec(gaussians=40, size=24, views=4, seed=11)
    a = generate_synthetic_scene(spec)
    b = generate_synthetic_scene(spec)
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert np.array_equal(a.cloud.colors, b.cloud.colors)
    for pa, pb in zip(a.poses, b.poses):
        assert np.array_equal(pa.angles, pb.angles)
        assert np.array_equal(pa.translation, pb.translation)
    for ia, ib in zip(a.images, b.images):
        assert np.array_equal(ia, ib)


def test_different_seed_changes_the_scene():
    a = generate_synthetic_scene(SyntheticSceneSpec(gaussians=40, size=24, views=2, seed=1))
    b = generate_synthetic_scene(SyntheticSceneSpec(gaussians=40, size=24, views=2, seed=2))
    assert not np.array_equal(a.cloud.positions, b.cloud.positions)


def test_rendering_returned_cloud_reproduces_returned_images():
    scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=50, size=32, views=3, seed=5))
    for pose, image in zip(scene.poses, scene.images):
        again = render(scene.cloud, pose, scene.intrinsics).image
        assert np.array_equal(again, image)


def test_single_view_is_valid():
    scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=20, size=16, views=1, seed=3))
    assert len(scene.poses) == 1
    assert len(scene.images) == 1
    assert scene.images[0].shape == (16, 16, 3)


def test_all_views_face_the_cloud_centroid():
    scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=60, size=48, views=6, seed=7))
    centroid = scene.cloud.positions.mean(axis=0)
    cx, cy = scene.intrinsics.cx, scene.intrinsics.cy
    for pose in scene.poses:
        pixel, depth, valid = project_point(centroid, pose, scene.intrinsics)
        assert valid and depth > 0.0
        assert abs(pixel[0] - cx) < 1e-6 and abs(pixel[1] - cy) < 1e-6


def test_views_are_distinct_camera_positions():
    scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=30, size=16, views=5, seed=9))
    centers = np.stack([p.camera_center for p in scene.poses])
    gaps = np.linalg.norm(centers[1:] - centers[:-1], axis=1)
    assert (gaps > 1e-3).all()


def test_noise_perturbs_images_but_keeps_them_in_range():
    clean = generate_synthetic_scene(SyntheticSceneSpec(gaussians=40, size=24, views=2, seed=13))
    noisy = generate_synthetic_scene(
        SyntheticSceneSpec(gaussians=40, size=24, views=2, seed=13, noise=0.05)
    )
    for a, b in zip(clean.images, noisy.images):
        assert not np.array_equal(a, b)
        assert b.min() >= 0.0 and b.max() <= 1.0
        assert np.abs(a - b).mean() < 0.2  # perturbation, not replacement


def test_zero_texture_gives_a_flat_palette():
    scene = generate_synthetic_scene(SyntheticSceneSpec(gaussians=25, size=16, views=1, seed=4, texture=0.0))
    assert np.ptp(scene.cloud.colors) == 0.0


def test_spec_parse_round_trip():
    spec = SyntheticSceneSpec.parse("views=8,gaussians=300,size=64,seed=2,noise=0.01")
    assert spec.views == 8
    assert spec.gaussians == 300
    assert spec.size == 64
    assert spec.seed == 2
    assert spec.noise == pytest.approx(0.01)
    # unspecified fields keep defaults
    assert spec.orbit_radius == SyntheticSceneSpec().orbit_radius


def test_spec_parse_rejects_unknown_and_malformed_keys():
    with pytest.raises(ValueError, match="unknown"):
        SyntheticSceneSpec.parse("vues=8")
    with pytest.raises(ValueError, match="expected key=value"):
        SyntheticSceneSpec.parse("views")


def test_spec_validation():
    with pytest.raises(ValueError):
        generate_synthetic_scene(SyntheticSceneSpec(views=0))
    with pytest.raises(ValueError):
        generate_synthetic_scene(SyntheticSceneSpec(gaussians=0))
