import numpy as np
import pytest

from sceneforge.images import LdrImage


def rotation_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation from yaw/pitch/roll in radians (camera-frame composition)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ rx @ ry


def draw_wireframe(segments_3d, f: float, width: int, height: int,
                   thickness: float = 1.2) -> LdrImage:
    """Rasterize dark 3D line segments (camera coordinates) on white."""
    img = np.full((height, width), 255.0)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0

    def project(p):
        return np.array([f * p[0] / p[2] + cx, f * p[1] / p[2] + cy])

    for p0, p1 in segments_3d:
        a, b = project(np.asarray(p0, float)), project(np.asarray(p1, float))
        n = int(np.ceil(np.linalg.norm(b - a) * 2)) + 1
        for t in np.linspace(0, 1, n):
            x, y = a + t * (b - a)
            xi, yi = int(round(x)), int(round(y))
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    px, py = xi + dx, yi + dy
                    if 0 <= px < width and 0 <= py < height:
                        d = np.hypot(px - x, py - y)
                        val = 255.0 * min(1.0, max(0.0, d - thickness + 0.5))
                        img[py, px] = min(img[py, px], val)
    out = np.repeat(img[..., None], 3, axis=2)
    return LdrImage(np.floor(out + 0.5).astype(np.uint8))


def manhattan_line_field(rotation: np.ndarray, center=(0.0, 0.0, 6.0),
                         extent: float = 1.5, n_per_axis: int = 4):
    """Grid of segments parallel to the three rotated Manhattan axes."""
    center = np.asarray(center)
    axes = [rotation[:, i] for i in range(3)]
    offs = np.linspace(-extent, extent, n_per_axis)
    segments = []
    for i in range(3):
        u = axes[i]
        v = axes[(i + 1) % 3]
        w = axes[(i + 2) % 3]
        for a in offs:
            for b in (-extent, extent):
                p0 = center + a * v + b * w - extent * u
                p1 = center + a * v + b * w + extent * u
                segments.append((p0, p1))
    return segments


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
