"""Color-Retinex intrinsic decomposition: large or chromatic log-image
gradients are attributed to reflectance, the rest to shading, and reflectance
is recovered by least-squares Poisson integration with Neumann boundaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .images import HdrImage

T_GRAY = 0.075
T_COLOR = 1.0
_FLOOR = 1e-4


@dataclass(frozen=True)
class IntrinsicDecomposition:
    albedo: HdrImage   # diffuse reflectance, channels in [0, 1], max = 1
    shading: HdrImage  # nonnegative; albedo * shading reconstructs the input


def _forward_grad(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, :-1] = a[:, 1:] - a[:, :-1]
    gy[:-1, :] = a[1:, :] - a[:-1, :]
    return gx, gy


def _divergence(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    d = np.zeros_like(gx)
    d[:, 0] += gx[:, 0]
    d[:, 1:] += gx[:, 1:] - gx[:, :-1]
    d[:, -1] -= gx[:, -1]  # forward-difference stencil carries no flux out
    d[0, :] += gy[0, :]
    d[1:, :] += gy[1:, :] - gy[:-1, :]
    d[-1, :] -= gy[-1, :]
    return d


def _poisson_solve(gx: np.ndarray, gy: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Least-squares integration of a target gradient field (Neumann)."""
    h, w = gx.shape

    def laplacian(vec: np.ndarray) -> np.ndarray:
        r = vec.reshape(h, w)
        rx, ry = _forward_grad(r)
        return (_divergence(rx, ry) + 1e-9 * r).ravel()

    op = LinearOperator((h * w, h * w), matvec=laplacian, dtype=np.float64)
    rhs = _divergence(gx, gy).ravel()
    sol, info = cg(op, rhs, rtol=tol, atol=0.0, maxiter=20 * (h + w))
    if info > 0:
        sol, info = cg(op, rhs, rtol=tol * 100, atol=0.0, maxiter=40 * (h + w))
    r = sol.reshape(h, w)
    return r - r.mean()


def decompose(img: HdrImage, t_gray: float = T_GRAY,
              t_color: float = T_COLOR) -> IntrinsicDecomposition:
    """Split an image into diffuse albedo and shading.

    Gradient classification follows the Color-Retinex recipe: a pixel-pair
    belongs to reflectance when its chromaticity gradient exceeds t_color or
    its intensity log-gradient exceeds t_gray. Per-channel log offsets are
    fixed by forcing the mean log-shading to be channel-neutral, and the
    albedo is rescaled so its maximum channel equals one.
    """
    data = np.maximum(img.data.astype(np.float64), _FLOOR)
    log_i = np.log(data)
    gray = log_i.mean(axis=2)
    ggx, ggy = _forward_grad(gray)

    # log-chromaticity: per-channel log minus the channel mean; its gradient
    # vanishes on pure (channel-neutral) shading changes
    chrom = log_i - gray[..., None]
    cgx, cgy = _forward_grad(chrom)
    cgx_mag = np.linalg.norm(cgx, axis=2)
    cgy_mag = np.linalg.norm(cgy, axis=2)

    mask_x = (cgx_mag > t_color) | (np.abs(ggx) > t_gray)
    mask_y = (cgy_mag > t_color) | (np.abs(ggy) > t_gray)

    refl = np.empty_like(log_i)
    for c in range(3):
        gx, gy = _forward_grad(log_i[..., c])
        refl[..., c] = _poisson_solve(gx * mask_x, gy * mask_y)

    # channel-neutral mean log-shading pins the per-channel offsets
    shade_log = log_i - refl
    chan_mean = shade_log.mean(axis=(0, 1))
    refl += (chan_mean - chan_mean.mean())[None, None, :]

    albedo = np.exp(refl)
    albedo /= albedo.max()
    shading = data / albedo
    return IntrinsicDecomposition(albedo=HdrImage(albedo.astype(np.float32)),
                                  shading=HdrImage(shading.astype(np.float32)))


def reconstruction_error(dec: IntrinsicDecomposition, img: HdrImage) -> float:
    """Relative L2 error of albedo * shading against the (floored) input."""
    data = np.maximum(img.data.astype(np.float64), _FLOOR)
    recon = dec.albedo.data.astype(np.float64) * dec.shading.data.astype(np.float64)
    return float(np.linalg.norm(recon - data) / np.linalg.norm(data))
