"""Shared low-level image features: resizing, colorspaces, and a Gabor-energy
scene descriptor used for exemplar matching and indoor/outdoor voting."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .images import LdrImage, luminance


def resize_bilinear(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resample of (h, w) or (h, w, c) data to (height, width)."""
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[:2]
    if (w, h) == (width, height):
        return a.copy()
    # map output pixel centers to input pixel centers
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    if a.ndim == 2:
        a = a[..., None]
        squeeze = True
    else:
        squeeze = False
    top = a[y0[:, None], x0[None, :]] * (1 - fx)[None, :, None] \
        + a[y0[:, None], x1[None, :]] * fx[None, :, None]
    bot = a[y1[:, None], x0[None, :]] * (1 - fx)[None, :, None] \
        + a[y1[:, None], x1[None, :]] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out[..., 0] if squeeze else out


def to_gray(img: LdrImage) -> np.ndarray:
    """Luma in [0, 1] of an LDR image."""
    return luminance(img.data.astype(np.float64) / 255.0)


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; identity for sigma <= 0."""
    a = np.asarray(arr, dtype=np.float64)
    if sigma <= 0:
        return a.copy()
    r = int(np.ceil(3 * sigma))
    x = np.arange(-r, r + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    moved = a
    for axis in (0, 1):
        pad = [(0, 0)] * moved.ndim
        pad[axis] = (r, r)
        p = np.pad(moved, pad, mode="reflect")
        moved = np.apply_along_axis(
            lambda m: np.convolve(m, k, mode="valid"), axis, p)
    return moved


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """BT.601 YCbCr from RGB in [0, 1]; Cb/Cr centered at 0."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """CIE Lab (D65) from linear-ish sRGB values in [0, 1]."""
    x = np.asarray(rgb, dtype=np.float64)
    lin = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    m = np.array([[0.4124564, 0.3575761, 0.1804375],
                  [0.2126729, 0.7151522, 0.0721750],
                  [0.0193339, 0.1191920, 0.9503041]])
    xyz = lin @ m.T
    white = np.array([0.95047, 1.0, 1.08883])
    t = xyz / white
    f = np.where(t > (6 / 29) ** 3, np.cbrt(t), t / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


def polygon_mask(shape: tuple[int, int], polygon: np.ndarray) -> np.ndarray:
    """Even-odd rasterization of a polygon over pixel centers."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5
    inside = np.zeros(shape, dtype=bool)
    poly = np.asarray(polygon, dtype=np.float64)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 <= py) != (y1 <= py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xcross)
    return inside


@lru_cache(maxsize=8)
def _gabor_bank(size: int, n_scales: int, n_orients: int) -> np.ndarray:
    """Frequency-domain log-Gabor-style filters, (n_scales*n_orients, size, size)."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    r = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    filters = []
    for s in range(n_scales):
        f0 = 0.3 / (2.0 ** s)
        sigma_r = 0.6 * f0
        radial = np.exp(-0.5 * ((r - f0) / sigma_r) ** 2)
        for o in range(n_orients):
            th0 = np.pi * o / n_orients
            d = np.angle(np.exp(1j * 2.0 * (theta - th0))) / 2.0
            angular = np.exp(-0.5 * (d / (np.pi / (2 * n_orients))) ** 2)
            filters.append(radial * angular)
    return np.asarray(filters)


def gist_descriptor(gray: np.ndarray, size: int = 64, n_scales: int = 4,
                    n_orients: int = 6, grid: int = 4) -> np.ndarray:
    """Gabor-energy scene descriptor: oriented band energies pooled on a
    grid x grid lattice, L2-normalized. Default layout gives 4*6*16 = 384 dims."""
    g = resize_bilinear(np.asarray(gray, dtype=np.float64), size, size)
    g = g - g.mean()
    spec = np.fft.fft2(g)
    bank = _gabor_bank(size, n_scales, n_orients)
    cell = size // grid
    feats = np.empty(len(bank) * grid * grid)
    idx = 0
    for filt in bank:
        resp = np.abs(np.fft.ifft2(spec * filt))
        pooled = resp.reshape(grid, cell, grid, cell).mean(axis=(1, 3))
        feats[idx:idx + grid * grid] = pooled.ravel()
        idx += grid * grid
    n = np.linalg.norm(feats)
    return feats / n if n > 0 else feats
