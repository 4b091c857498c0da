import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.images import (HdrImage, LdrImage, ValidationError,
                               linear_to_srgb_u8, srgb_to_linear, tonemap)


def test_tonemap_zeros():
    img = HdrImage(np.zeros((3, 4, 3), dtype=np.float32))
    assert (tonemap(img, 1 / 2.2).data == 0).all()


def test_tonemap_unit_fixed_point():
    img = HdrImage(np.ones((2, 2, 3), dtype=np.float32))
    for gamma in (0.3, 1.0, 2.4):
        assert (tonemap(img, gamma).data == 255).all()


def test_tonemap_quarter_value():
    # round(255 * 0.25**(1/2.2)) = 136, from a scalar calculator
    img = HdrImage(np.full((1, 1, 3), 0.25, dtype=np.float32))
    assert tonemap(img, 1 / 2.2).data[0, 0, 0] == 136


def test_tonemap_rejects_bad_gamma():
    img = HdrImage(np.ones((1, 1, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        tonemap(img, 0.0)
    with pytest.raises(ValueError):
        tonemap(img, -1.0)


@settings(max_examples=50, deadline=None)
@given(gamma=st.floats(0.1, 4.0),
       values=st.lists(st.floats(0, 4), min_size=2, max_size=32))
def test_tonemap_monotone(gamma, values):
    arr = np.asarray(values, dtype=np.float32).reshape(1, -1)
    img = HdrImage(np.repeat(arr[..., None], 3, axis=2))
    out = tonemap(img, gamma).data[..., 0].ravel()
    order = np.argsort(arr.ravel(), kind="stable")
    assert (np.diff(out[order]) >= 0).all()


def test_srgb_roundtrip():
    rng = np.random.default_rng(0)
    ldr = LdrImage(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    lin = srgb_to_linear(ldr)
    back = linear_to_srgb_u8(lin.data)
    assert np.array_equal(back, ldr.data)


def test_hdr_image_validation():
    with pytest.raises(ValidationError):
        HdrImage(np.full((2, 2, 3), -1.0, dtype=np.float32))
    bad = np.zeros((2, 2, 3), dtype=np.float32)
    bad[1, 0, 2] = np.nan
    with pytest.raises(ValidationError, match=r"\(0,1\).*channel 2"):
        HdrImage(bad)
    with pytest.raises(ValidationError):
        HdrImage(np.zeros((2, 2, 4), dtype=np.float32))


def test_images_immutable():
    img = HdrImage(np.ones((2, 2, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 2.0
