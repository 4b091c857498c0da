"""Pinhole camera recovery from vanishing points, depth unprojection, normals,
and triangulation of depth maps into render meshes.

Conventions: camera sits at the origin looking down +z, image x right, image
y down. Depth is the z-coordinate of the surface point (the multiplier of
K^-1 [x, y, 1]^T). The camera rotation matrix stores the scene's three
Manhattan axis directions, expressed in camera coordinates, as its columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .images import LdrImage, ValidationError, luminance
from .rng import rand


class InsufficientStructure(RuntimeError):
    """Too few stable line clusters to recover three orthogonal VPs."""


class DegenerateGeometry(RuntimeError):
    """Vanishing point configuration does not yield a valid camera."""


@dataclass(frozen=True)
class PinholeCamera:
    f: float
    c0: tuple[float, float]
    rotation: np.ndarray  # columns = Manhattan axes in camera coordinates

    def __post_init__(self) -> None:
        if not self.f > 0:
            raise ValidationError(f"focal length must be positive, got {self.f}")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ValidationError("rotation is not orthonormal within 1e-6")
        if np.linalg.det(r) < 0:
            raise ValidationError("rotation must have determinant +1")
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "c0", (float(self.c0[0]), float(self.c0[1])))
        object.__setattr__(self, "f", float(self.f))

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.c0
        return np.array([[self.f, 0, cx], [0, self.f, cy], [0, 0, 1.0]])


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (h, w) float, positive z-depth per pixel

    def __post_init__(self) -> None:
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValidationError(f"DepthMap expects (h, w) data, got {d.shape}")
        if not np.isfinite(d).all():
            raise ValidationError("depth map contains non-finite values")
        if (d <= 0).any():
            raise ValidationError("depth map must be strictly positive")
        d = np.ascontiguousarray(d)
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class VanishingPoints:
    """Three homogeneous 2D vanishing points of mutually orthogonal directions."""

    vp: np.ndarray  # (3, 3) rows [x, y, w]; w == 0 marks a point at infinity
    support: tuple = field(default_factory=tuple)  # per-VP list of segments

    def __post_init__(self) -> None:
        v = np.asarray(self.vp, dtype=np.float64)
        if v.shape != (3, 3):
            raise ValidationError("expected three homogeneous vanishing points")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "vp", v)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray      # (n, 3) float64
    triangles: np.ndarray     # (m, 3) int32 vertex indices
    albedo_ref: np.ndarray    # (n, 2) int32 source pixel (y, x) per vertex

    def __post_init__(self) -> None:
        tris = np.asarray(self.triangles)
        if len(tris) and (tris.min() < 0 or tris.max() >= len(self.vertices)):
            raise ValidationError("triangle index out of range")


# ---------------------------------------------------------------------------
# Line segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSegment:
    p0: tuple[float, float]
    p1: tuple[float, float]

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.p0) + np.asarray(self.p1))

    @property
    def direction(self) -> np.ndarray:
        d = np.asarray(self.p1) - np.asarray(self.p0)
        n = np.hypot(d[0], d[1])
        return d / n if n > 0 else d

    @property
    def length(self) -> float:
        d = np.asarray(self.p1) - np.asarray(self.p0)
        return float(np.hypot(d[0], d[1]))

    @property
    def line(self) -> np.ndarray:
        """Homogeneous line through the endpoints, normalized so that
        line . [x, y, 1] is a signed pixel distance."""
        a = np.array([self.p0[0], self.p0[1], 1.0])
        b = np.array([self.p1[0], self.p1[1], 1.0])
        l = np.cross(a, b)
        n = np.hypot(l[0], l[1])
        return l / n if n > 0 else l


def detect_line_segments(
    img: LdrImage,
    mag_threshold: float = 0.02,
    angle_tol_deg: float = 22.5,
    min_length: float = 8.0,
    min_elongation: float = 3.0,
) -> list[LineSegment]:
    """Gradient-magnitude line segment detector (region growing on the
    level-line field, in the style of LSD)."""
    gray = luminance(img.data.astype(np.float64) / 255.0)
    h, w = gray.shape
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = 0.5 * (gray[:, 2:] - gray[:, :-2])
    gy[1:-1, :] = 0.5 * (gray[2:, :] - gray[:-2, :])
    mag = np.hypot(gx, gy)
    # level-line direction (perpendicular to the gradient), doubled-angle form
    theta2 = 2.0 * (np.arctan2(gy, gx) + 0.5 * np.pi)
    cos2, sin2 = np.cos(theta2), np.sin(theta2)

    candidate = mag > mag_threshold
    order = np.argsort(mag.ravel())[::-1]
    used = ~candidate
    cos_tol = np.cos(np.deg2rad(2.0 * angle_tol_deg))  # doubled-angle space

    segments: list[LineSegment] = []
    neighbors = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    for flat in order:
        y, x = divmod(int(flat), w)
        if used[y, x]:
            continue
        region = [(y, x)]
        used[y, x] = True
        sum_c, sum_s = cos2[y, x], sin2[y, x]
        head = 0
        while head < len(region):
            cy, cx = region[head]
            head += 1
            for dy, dx in neighbors:
                ny, nx = cy + dy, cx + dx
                if ny < 0 or ny >= h or nx < 0 or nx >= w or used[ny, nx]:
                    continue
                norm = np.hypot(sum_c, sum_s)
                if norm == 0:
                    continue
                align = (cos2[ny, nx] * sum_c + sin2[ny, nx] * sum_s) / norm
                if align >= cos_tol:
                    used[ny, nx] = True
                    region.append((ny, nx))
                    sum_c += cos2[ny, nx]
                    sum_s += sin2[ny, nx]
        if len(region) < int(min_length):
            continue
        pts = np.asarray(region, dtype=np.float64)[:, ::-1]  # (n, 2) as (x, y)
        weights = mag[tuple(np.asarray(region).T)]
        mean = np.average(pts, axis=0, weights=weights)
        cov = np.cov((pts - mean).T, aweights=weights, bias=True)
        evals, evecs = np.linalg.eigh(cov)
        axis = evecs[:, 1]
        proj = (pts - mean) @ axis
        length = proj.max() - proj.min()
        width_rms = np.sqrt(max(evals[0], 1e-12))
        if length < min_length or length < min_elongation * 2.0 * width_rms:
            continue
        p0 = mean + proj.min() * axis
        p1 = mean + proj.max() * axis
        segments.append(LineSegment((float(p0[0]), float(p0[1])),
                                    (float(p1[0]), float(p1[1]))))
    return segments


# ---------------------------------------------------------------------------
# Vanishing point detection
# ---------------------------------------------------------------------------

def _vp_from_two_lines(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    v = np.cross(l1, l2)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _as_point_or_dir(v: np.ndarray, inf_eps: float = 1e-8) -> np.ndarray:
    """Normalize homogeneous point: w=1 for finite, w=0 for infinity."""
    if abs(v[2]) < inf_eps * np.hypot(v[0], v[1]):
        d = np.array([v[0], v[1], 0.0])
        return d / np.hypot(d[0], d[1])
    return np.array([v[0] / v[2], v[1] / v[2], 1.0])


def _segment_vp_alignment(seg_mid: np.ndarray, seg_dir: np.ndarray,
                          vp: np.ndarray) -> float:
    """|cos| of the angle between a segment and the direction to a VP."""
    if vp[2] == 0.0:
        to_vp = vp[:2]
    else:
        to_vp = vp[:2] - seg_mid
    n = np.hypot(to_vp[0], to_vp[1])
    if n == 0:
        return 1.0
    return abs(float(seg_dir @ to_vp / n))


def detect_vanishing_points(
    img: LdrImage,
    seed: int = 0,
    iterations: int = 2000,
    angle_inlier_deg: float = 2.0,
    min_support: int = 3,
) -> VanishingPoints:
    """RANSAC over VP triplets from detected line segments.

    Samples two segment pairs per iteration, hypothesizes two finite VPs,
    derives the camera focal length from their orthogonality (principal point
    at the image center), completes the orthogonal triplet, and scores by
    length-weighted inlier count. Deterministic for a fixed seed.
    """
    segments = detect_line_segments(img)
    if len(segments) < 20:
        raise InsufficientStructure(
            f"found {len(segments)} line segments, need at least 20")
    w, h = img.width, img.height
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    mids = np.array([s.midpoint for s in segments])
    dirs = np.array([s.direction for s in segments])
    lens = np.array([s.length for s in segments])
    lines = np.array([s.line for s in segments])
    n = len(segments)
    cos_inlier = np.cos(np.deg2rad(angle_inlier_deg))

    def score_triplet(vps: list[np.ndarray]) -> tuple[float, np.ndarray]:
        best_align = np.zeros(n)
        labels = np.full(n, -1)
        for k, vp in enumerate(vps):
            align = np.array([
                _segment_vp_alignment(mids[i], dirs[i], vp) for i in range(n)])
            better = align > best_align
            best_align[better] = align[better]
            labels[better] = k
        labels[best_align < cos_inlier] = -1
        score = lens[labels >= 0].sum()
        return float(score), labels

    best_score, best_vps, best_labels = -1.0, None, None
    for it in range(iterations):
        idx = [int(rand(seed, it, slot) * n) % n for slot in range(4)]
        if len(set(idx)) < 4:
            continue
        v1 = _as_point_or_dir(_vp_from_two_lines(lines[idx[0]], lines[idx[1]]))
        v2 = _as_point_or_dir(_vp_from_two_lines(lines[idx[2]], lines[idx[3]]))
        if v1[2] == 0.0 or v2[2] == 0.0:
            continue
        f_sq = -float((v1[:2] - c) @ (v2[:2] - c))
        if not (0.1 * w) ** 2 < f_sq < (10.0 * w) ** 2:
            continue
        f = np.sqrt(f_sq)
        d1 = _calibrated_dir(v1, c, f)
        d2 = _calibrated_dir(v2, c, f)
        d2 = d2 - (d1 @ d2) * d1
        nn = np.linalg.norm(d2)
        if nn < 1e-9:
            continue
        d2 /= nn
        d3 = np.cross(d1, d2)
        v3 = _project_dir(d3, c, f)
        score, labels = score_triplet([v1, v2, v3])
        if score > best_score:
            best_score, best_vps, best_labels = score, [v1, v2, v3], labels

    if best_vps is None:
        raise InsufficientStructure("no orthogonality-consistent VP triplet found")

    # Refinement: reassign segments, then refit (f, rotation) jointly with the
    # orthogonality constraint built in, so weakly supported VPs cannot drift.
    vps, labels = best_vps, best_labels
    f0 = np.sqrt(max(-(vps[0][:2] - c) @ (vps[1][:2] - c), (0.2 * w) ** 2))
    r0 = _rotation_from_vps(vps, c, f0)
    for _ in range(3):
        r0, f0 = _refine_camera_fit(mids, dirs, lens, labels, r0, f0, c)
        vps = [_project_dir(r0[:, k], c, f0) for k in range(3)]
        _, labels = score_triplet(vps)

    counts = [(labels == k).sum() for k in range(3)]
    if min(counts) < min_support:
        raise InsufficientStructure(
            f"per-VP support counts {counts} below minimum {min_support}")

    support = tuple(
        tuple(segments[i] for i in np.flatnonzero(labels == k)) for k in range(3))
    return VanishingPoints(np.asarray(vps), support)


def _rotation_from_vps(vps: list[np.ndarray], c: np.ndarray,
                       f: float) -> np.ndarray:
    dirs = np.stack([_calibrated_dir(v, c, f) for v in vps], axis=1)
    if np.linalg.det(dirs) < 0:
        dirs[:, 2] = -dirs[:, 2]
    u, _, vt = np.linalg.svd(dirs)
    return u @ np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u @ vt)))]) @ vt


def _rodrigues(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3)
    k = omega / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


def _refine_camera_fit(mids: np.ndarray, dirs_seg: np.ndarray,
                       lens: np.ndarray, labels: np.ndarray,
                       r0: np.ndarray, f0: float,
                       c: np.ndarray) -> tuple[np.ndarray, float]:
    """Length-weighted angular least squares over (rotation, focal length)."""
    from scipy.optimize import least_squares

    sel = labels >= 0
    m = mids[sel]
    d = dirs_seg[sel]
    ln = np.sqrt(lens[sel])
    lab = labels[sel]

    def residuals(theta: np.ndarray) -> np.ndarray:
        rot = r0 @ _rodrigues(theta[:3])
        f = f0 * np.exp(theta[3])
        out = np.empty(len(m))
        for i in range(len(m)):
            ax = rot[:, lab[i]]
            if abs(ax[2]) < 1e-9:
                to_vp = ax[:2]
            else:
                vp = np.array([c[0] + f * ax[0] / ax[2],
                               c[1] + f * ax[1] / ax[2]])
                to_vp = vp - m[i]
            n = np.hypot(to_vp[0], to_vp[1])
            if n < 1e-12:
                out[i] = 0.0
                continue
            out[i] = ln[i] * (d[i, 0] * to_vp[1] - d[i, 1] * to_vp[0]) / n
        return out

    # soft-L1 keeps junction debris from biasing the fit; the scale puts the
    # robust knee near a fraction of a degree for a typical segment length
    res = least_squares(residuals, np.zeros(4), method="trf",
                        loss="soft_l1", f_scale=0.05, xtol=1e-12,
                        ftol=1e-12, max_nfev=200)
    rot = r0 @ _rodrigues(res.x[:3])
    return rot, float(f0 * np.exp(res.x[3]))


def _calibrated_dir(vp: np.ndarray, c: np.ndarray, f: float) -> np.ndarray:
    if vp[2] == 0.0:
        d = np.array([vp[0], vp[1], 0.0])
    else:
        d = np.array([(vp[0] - c[0]) / f, (vp[1] - c[1]) / f, 1.0])
    return d / np.linalg.norm(d)


def _project_dir(d: np.ndarray, c: np.ndarray, f: float) -> np.ndarray:
    if abs(d[2]) < 1e-9:
        v = np.array([d[0], d[1], 0.0])
        return v / np.hypot(v[0], v[1])
    return np.array([c[0] + f * d[0] / d[2], c[1] + f * d[1] / d[2], 1.0])


def camera_from_vps(vps: VanishingPoints, width: int, height: int) -> PinholeCamera:
    """Pinhole camera from three orthogonal vanishing points.

    Focal length comes from the orthogonality constraints on pairs of finite
    VPs; the principal point is the orthocenter of the VP triangle when all
    three are finite (image center otherwise, or when the triangle is
    ill-conditioned). Rotation columns are the calibrated VP directions,
    re-orthonormalized with determinant +1.
    """
    v = np.asarray(vps.vp, dtype=np.float64)
    finite = [i for i in range(3) if v[i, 2] != 0.0]
    if len(finite) < 2:
        raise DegenerateGeometry("need at least two finite vanishing points")
    pts = {i: v[i, :2] / v[i, 2] for i in finite}
    for a in finite:
        for b in finite:
            if a < b and np.hypot(*(pts[a] - pts[b])) < 1.0:
                raise DegenerateGeometry(f"vanishing points {a} and {b} coincide")

    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    c = center
    if len(finite) == 3:
        p1, p2, p3 = (pts[i] for i in range(3))
        # orthocenter: (c - p1) . (p2 - p3) = 0 and (c - p2) . (p1 - p3) = 0
        a_mat = np.array([p2 - p3, p1 - p3])
        rhs = np.array([p1 @ (p2 - p3), p2 @ (p1 - p3)])
        diam = max(np.linalg.norm(p1 - p2), np.linalg.norm(p2 - p3),
                   np.linalg.norm(p1 - p3))
        e1, e2 = p2 - p1, p3 - p1
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        if diam > 0 and area / diam**2 > 1e-3:
            c = np.linalg.solve(a_mat, rhs)

    f_sqs = []
    for i in finite:
        for j in finite:
            if i < j:
                f_sq = -float((pts[i] - c) @ (pts[j] - c))
                if f_sq > 0:
                    f_sqs.append(f_sq)
    if not f_sqs:
        raise DegenerateGeometry("orthogonality constraints give no positive f^2")
    f = float(np.sqrt(np.mean(f_sqs)))

    dirs = np.stack([_calibrated_dir(v[i], c, f) for i in range(3)], axis=1)
    max_dev = max(abs(dirs[:, i] @ dirs[:, j])
                  for i in range(3) for j in range(3) if i < j)
    if max_dev > np.sin(np.deg2rad(5.0)):
        raise DegenerateGeometry(
            f"calibrated VP directions deviate from orthogonal by more than 5 deg "
            f"(|cos| = {max_dev:.4f})")
    # VP direction signs are ambiguous; fix handedness before snapping to the
    # nearest rotation, otherwise the correction smears across all columns
    if np.linalg.det(dirs) < 0:
        dirs[:, 2] = -dirs[:, 2]
    u, _, vt = np.linalg.svd(dirs)
    rot = u @ np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u @ vt)))]) @ vt
    return PinholeCamera(f=f, c0=(float(c[0]), float(c[1])), rotation=rot)


def fallback_camera(width: int, height: int, f_factor: float = 0.85) -> PinholeCamera:
    """Centered identity-rotation camera used when VP detection fails."""
    return PinholeCamera(f=f_factor * width,
                         c0=((width - 1) / 2.0, (height - 1) / 2.0),
                         rotation=np.eye(3))


# ---------------------------------------------------------------------------
# Unprojection, normals, triangulation
# ---------------------------------------------------------------------------

def pixel_rays(cam: PinholeCamera, width: int, height: int) -> np.ndarray:
    """(h, w, 3) array of K^-1 [x, y, 1] per pixel (z component is 1)."""
    cx, cy = cam.c0
    xs = (np.arange(width, dtype=np.float64) - cx) / cam.f
    ys = (np.arange(height, dtype=np.float64) - cy) / cam.f
    r = np.empty((height, width, 3))
    r[..., 0] = xs[None, :]
    r[..., 1] = ys[:, None]
    r[..., 2] = 1.0
    return r


def unproject(depth: DepthMap, cam: PinholeCamera, x: int, y: int) -> np.ndarray:
    """3D point of pixel (x, y): depth times K^-1 [x, y, 1]^T."""
    if not (0 <= x < depth.width and 0 <= y < depth.height):
        raise IndexError(f"pixel ({x},{y}) outside {depth.width}x{depth.height}")
    cx, cy = cam.c0
    d = depth.depth[y, x]
    return np.array([d * (x - cx) / cam.f, d * (y - cy) / cam.f, d])


def unproject_all(depth: DepthMap, cam: PinholeCamera) -> np.ndarray:
    """(h, w, 3) array of unprojected pixel positions."""
    return depth.depth[..., None] * pixel_rays(cam, depth.width, depth.height)


def project(cam: PinholeCamera, pts: np.ndarray) -> np.ndarray:
    """Project camera-space points to pixel coordinates, (..., 2)."""
    pts = np.asarray(pts, dtype=np.float64)
    cx, cy = cam.c0
    return np.stack([cam.f * pts[..., 0] / pts[..., 2] + cx,
                     cam.f * pts[..., 1] / pts[..., 2] + cy], axis=-1)


def _tangents(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference 3D tangents (forward/backward at borders)."""
    tx = np.empty_like(points)
    ty = np.empty_like(points)
    tx[:, 1:-1] = points[:, 2:] - points[:, :-2]
    tx[:, 0] = points[:, 1] - points[:, 0]
    tx[:, -1] = points[:, -1] - points[:, -2]
    ty[1:-1, :] = points[2:, :] - points[:-2, :]
    ty[0, :] = points[1, :] - points[0, :]
    ty[-1, :] = points[-1, :] - points[-2, :]
    return tx, ty


def normals_from_depth(
    depth: DepthMap, cam: PinholeCamera
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel unit normals of the unprojected depth map.

    Returns (normals, degenerate) where normals is (h, w, 3), unit length,
    oriented toward the camera, and degenerate flags pixels whose tangent
    cross product vanished (normal set to the reversed view direction).
    """
    rays = pixel_rays(cam, depth.width, depth.height)
    pts = depth.depth[..., None] * rays
    tx, ty = _tangents(pts)
    cr = np.cross(tx, ty)
    norm = np.linalg.norm(cr, axis=-1)
    scale = (depth.depth / cam.f) ** 2
    degenerate = norm < 1e-12 * np.maximum(scale, 1e-30)
    view = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    safe = np.where(degenerate[..., None], 1.0, norm[..., None])
    n = np.where(degenerate[..., None], -view, cr / safe)
    flip = np.sum(n * view, axis=-1) > 0
    n = np.where(flip[..., None], -n, n)
    return n, degenerate


def triangulate(
    depth: DepthMap, cam: PinholeCamera, discontinuity_ratio: float = 1.25
) -> TriangleMesh:
    """Two triangles per pixel quad; quads whose corner depths differ by more
    than the discontinuity ratio are dropped so no face spans a depth jump."""
    h, w = depth.height, depth.width
    pts = unproject_all(depth, cam).reshape(-1, 3)
    ys, xs = np.mgrid[0:h, 0:w]
    albedo_ref = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.int32)

    d = depth.depth
    d00 = d[:-1, :-1]
    d10 = d[:-1, 1:]
    d01 = d[1:, :-1]
    d11 = d[1:, 1:]
    dmax = np.maximum.reduce([d00, d10, d01, d11])
    dmin = np.minimum.reduce([d00, d10, d01, d11])
    keep = (dmax / dmin) <= discontinuity_ratio

    idx = np.arange(h * w).reshape(h, w)
    i00 = idx[:-1, :-1][keep]
    i10 = idx[:-1, 1:][keep]
    i01 = idx[1:, :-1][keep]
    i11 = idx[1:, 1:][keep]
    tris = np.concatenate([
        np.stack([i00, i10, i01], axis=1),
        np.stack([i10, i11, i01], axis=1),
    ]).astype(np.int32)

    # drop exactly degenerate (zero-area) faces
    e1 = pts[tris[:, 1]] - pts[tris[:, 0]]
    e2 = pts[tris[:, 2]] - pts[tris[:, 0]]
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    tris = tris[area2 > 1e-18]
    return TriangleMesh(vertices=pts, triangles=tris, albedo_ref=albedo_ref)
