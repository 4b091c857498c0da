"""Core raster types: linear-radiance HDR images and 8-bit sRGB LDR images.

All radiometry inside the package is linear RGB. sRGB decoding happens exactly
once, when an LDR image enters the pipeline (see :func:`srgb_to_linear`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Raised when image or scene data violates a structural invariant."""


class FormatError(ValueError):
    """Raised when a file does not parse as the expected format."""


def _first_bad_pixel(mask: np.ndarray) -> tuple[int, int, int]:
    """Index (y, x, channel) of the first True entry in a (h, w, 3) mask."""
    flat = int(np.flatnonzero(mask)[0])
    h, w, c = mask.shape
    return (flat // (w * c), (flat // c) % w, flat % c)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HdrImage:
    """Linear-radiance RGB raster. data has shape (height, width, 3), float32.

    Invariants: every channel finite and >= 0.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"HdrImage expects (h, w, 3) data, got {arr.shape}")
        bad = ~np.isfinite(arr)
        if bad.any():
            y, x, c = _first_bad_pixel(bad)
            raise ValidationError(f"non-finite radiance at pixel ({x},{y}) channel {c}")
        bad = arr < 0
        if bad.any():
            y, x, c = _first_bad_pixel(bad)
            raise ValidationError(
                f"negative radiance {arr[y, x, c]} at pixel ({x},{y}) channel {c}"
            )
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def _wrap_trusted(cls, arr: np.ndarray) -> "HdrImage":
        """Skip invariant scans for arrays that are valid by construction
        (hot paths only; the caller must guarantee finite nonnegative data)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", _freeze(arr))
        return obj


@dataclass(frozen=True)
class LdrImage:
    """8-bit sRGB raster, shape (height, width, 3), uint8."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ValidationError(f"LdrImage expects uint8 data, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"LdrImage expects (h, w, 3) data, got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def tonemap(img: HdrImage, gamma: float) -> LdrImage:
    """Apply the power-law camera response clamp(x, 0, 1)**gamma and quantize.

    Quantization is round-half-up of 255*v, matching the display path used by
    the relighting solver's response model.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    v = np.clip(img.data.astype(np.float64), 0.0, 1.0) ** gamma
    return LdrImage(np.floor(v * 255.0 + 0.5).astype(np.uint8))


def srgb_to_linear(img: LdrImage) -> HdrImage:
    """Decode 8-bit sRGB to linear radiance (the one sRGB decode in the pipeline)."""
    x = img.data.astype(np.float64) / 255.0
    lin = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    return HdrImage(lin.astype(np.float32))


def linear_to_srgb_u8(data: np.ndarray) -> np.ndarray:
    """Encode linear [0,1] floats to 8-bit sRGB (display/preview helper)."""
    x = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    enc = np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)
    return np.floor(enc * 255.0 + 0.5).astype(np.uint8)


def luminance(data: np.ndarray) -> np.ndarray:
    """Rec.709 luma of an (h, w, 3) array."""
    d = np.asarray(data, dtype=np.float64)
    return 0.2126 * d[..., 0] + 0.7152 * d[..., 1] + 0.0722 * d[..., 2]
