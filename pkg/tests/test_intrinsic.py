import numpy as np

from sceneforge.images import HdrImage
from sceneforge.intrinsic import decompose, reconstruction_error


def _fixture(seed=0):
    """Piecewise-constant albedo times smooth gray shading, with truth."""
    h, w = 48, 64
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    shade = np.clip(0.6 + 0.25 * np.sin(xs / w * 2.0) * np.cos(ys / h * 1.5)
                    + 0.15 * (ys / h), 0.05, None)
    alb = np.ones((h, w, 3)) * 0.3
    alb[:, :w // 2] = [0.8, 0.25, 0.2]
    alb[h // 3:, w // 4:3 * w // 4] = [0.2, 0.6, 0.35]
    img = HdrImage((alb * shade[..., None]).astype(np.float32))
    return img, alb, shade


def test_constant_color_image():
    img = HdrImage(np.full((24, 32, 3), [0.5, 0.3, 0.2], dtype=np.float32))
    dec = decompose(img)
    assert dec.albedo.data.std(axis=(0, 1)).max() < 1e-4
    # shading carries all the (absent) variation up to a global scale
    assert dec.shading.data.std() / dec.shading.data.mean() < 1e-4


def test_fixture_recovery_within_5pct():
    img, alb_true, _ = _fixture()
    dec = decompose(img)
    ratio = dec.albedo.data.astype(np.float64) / alb_true
    scale = np.median(ratio)
    err = np.sqrt(np.mean((dec.albedo.data / scale - alb_true) ** 2))
    assert err / np.sqrt(np.mean(alb_true ** 2)) <= 0.05


def test_reconstruction_consistency():
    img, _, _ = _fixture()
    dec = decompose(img)
    assert reconstruction_error(dec, img) <= 1e-3


def test_albedo_in_range_and_max_one():
    img, _, _ = _fixture()
    dec = decompose(img)
    assert dec.albedo.data.min() >= 0.0
    assert abs(float(dec.albedo.data.max()) - 1.0) < 1e-6


def test_scale_covariance():
    img, _, _ = _fixture()
    dec1 = decompose(img)
    dec2 = decompose(HdrImage(2.0 * img.data))
    assert np.abs(dec2.albedo.data - dec1.albedo.data).max() < 1e-6
    ratio = dec2.shading.data / np.maximum(dec1.shading.data, 1e-9)
    assert np.abs(ratio - 2.0).max() < 1e-3


def test_exposure_invariance_of_albedo():
    img, _, _ = _fixture()
    dec1 = decompose(img)
    dec2 = decompose(HdrImage(np.exp(0.37) * img.data))  # constant log shift
    assert np.abs(dec2.albedo.data - dec1.albedo.data).max() <= 1e-6
