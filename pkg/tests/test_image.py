"""Bilinear sampling and image gradient maps."""
import numpy as np

from splatpose.image import image_gradients, sample_bilinear, sample_bilinear_many


def _rand_image(rng, h=12, w=16):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


def test_sample_at_integer_coordinates_is_exact():
    rng = np.random.default_rng(3)
    img = _rand_image(rng)
    for _ in range(50):
        v = rng.integers(0, img.shape[0])
        u = rng.integers(0, img.shape[1])
        val, ok = sample_bilinear(img, np.array([u, v], dtype=float))
        assert ok
        assert np.array_equal(val, img[v, u])


def test_sample_matches_weighted_sum_oracle():
    rng = np.random.default_rng(5)
    img = _rand_image(rng)
    for _ in range(200):
        u = rng.uniform(0.0, img.shape[1] - 1.0)
        v = rng.uniform(0.0, img.shape[0] - 1.0)
        u0, v0 = int(np.floor(u)), int(np.floor(v))
        u1, v1 = min(u0 + 1, img.shape[1] - 1), min(v0 + 1, img.shape[0] - 1)
        fu, fv = u - u0, v - v0
        expect = (
            img[v0, u0] * (1 - fu) * (1 - fv)
            + img[v0, u1] * fu * (1 - fv)
            + img[v1, u0] * (1 - fu) * fv
            + img[v1, u1] * fu * fv
        )
        val, ok = sample_bilinear(img, np.array([u, v]))
        assert ok
        assert np.abs(val - expect).max() < 1e-12


def test_sample_reproduces_linear_images():
    # bilinear interpolation is exact on functions linear in u and v
    h, w = 9, 13
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    img = np.stack([0.3 + 0.02 * uu, 0.1 + 0.04 * vv, 0.2 + 0.01 * uu + 0.03 * vv], axis=-1)
    rng = np.random.default_rng(7)
    for _ in range(100):
        u = rng.uniform(0, w - 1)
        v = rng.uniform(0, h - 1)
        val, ok = sample_bilinear(img, np.array([u, v]))
        assert ok
        expect = np.array([0.3 + 0.02 * u, 0.1 + 0.04 * v, 0.2 + 0.01 * u + 0.03 * v])
        assert np.abs(val - expect).max() < 1e-12


def test_sample_out_of_bounds_flagged():
    img = np.zeros((4, 6, 3))
    for uv in ([-0.001, 1.0], [5.001, 1.0], [2.0, -0.5], [2.0, 3.5]):
        _, ok = sample_bilinear(img, np.array(uv))
        assert not ok
    for uv in ([0.0, 0.0], [5.0, 3.0], [4.999, 2.999]):
        _, ok = sample_bilinear(img, np.array(uv))
        assert ok


def test_sample_many_agrees_with_single():
    rng = np.random.default_rng(11)
    img = _rand_image(rng)
    uv = np.column_stack(
        [rng.uniform(-1.0, img.shape[1], size=64), rng.uniform(-1.0, img.shape[0], size=64)]
    )
    vals, ok = sample_bilinear_many(img, uv)
    for i in range(len(uv)):
        v1, ok1 = sample_bilinear(img, uv[i])
        assert ok1 == ok[i]
        if ok1:
            assert np.abs(vals[i] - v1).max() < 1e-12


def test_gradient_of_horizontal_ramp():
    h, w = 8, 10
    uu = np.tile(np.arange(w, dtype=float), (h, 1)) / w
    img = np.repeat(uu[:, :, None], 3, axis=2)
    gu, gv = image_gradients(img)
    assert np.abs(gu[:, 1:-1] - 1.0 / w).max() < 1e-12
    # one-sided at the borders still sees the same slope on a perfect ramp
    assert np.abs(gu[:, 0] - 1.0 / w).max() < 1e-12
    assert np.abs(gv).max() < 1e-12


def test_gradient_matches_stencil_oracle():
    # hand-rolled central differences (one-sided at the borders)
    rng = np.random.default_rng(13)
    img = _rand_image(rng)
    gu, gv = image_gradients(img)
    expect_u = np.empty_like(img)
    expect_u[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    expect_u[:, 0] = img[:, 1] - img[:, 0]
    expect_u[:, -1] = img[:, -1] - img[:, -2]
    expect_v = np.empty_like(img)
    expect_v[1:-1] = (img[2:] - img[:-2]) / 2.0
    expect_v[0] = img[1] - img[0]
    expect_v[-1] = img[-1] - img[-2]
    assert np.abs(gu - expect_u).max() < 1e-12
    assert np.abs(gv - expect_v).max() < 1e-12


def test_gradient_of_constant_image_is_zero():
    img = np.full((6, 7, 3), 0.42)
    gu, gv = image_gradients(img)
    assert np.abs(gu).max() == 0.0
    assert np.abs(gv).max() == 0.0
