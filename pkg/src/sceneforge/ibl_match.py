"""Out-of-frustum illumination inference: panorama sampling, pairwise image
similarity features, a render-based distance between image-based lights, and
a 1-slack linear ranking SVM over the similarity features."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .assets import IblLight, Panorama, SceneModel
from .features import polygon_mask, resize_bilinear
from .geometry import DepthMap
from .images import (HdrImage, LdrImage, ValidationError, luminance,
                     tonemap)
from .light_detect import LightClassifier, probability_map
from .meshes import icosphere
from .render import InsertedObject, RenderSettings, basis_render
from .rng import rand

SAMPLE_WIDTH = 128
SAMPLE_HEIGHT = 96
FEATURE_NAMES = ("nd_gc", "nd_om", "nd_lc", "hi_sp", "hi_h", "hi_s", "hi_v")


# ---------------------------------------------------------------------------
# Panorama sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectilinearSample:
    image: LdrImage
    panorama_id: str
    azimuth: float
    elevation: float
    fov: float

    def __post_init__(self) -> None:
        if not 0 <= self.azimuth < 2 * np.pi + 1e-9:
            raise ValidationError("azimuth out of [0, 2pi)")
        if not -np.pi / 6 - 1e-9 <= self.elevation <= np.pi / 6 + 1e-9:
            raise ValidationError("elevation out of [-pi/6, pi/6]")
        if not np.pi / 3 - 1e-9 <= self.fov <= np.pi / 2 + 1e-9:
            raise ValidationError("fov out of [pi/3, pi/2]")


def _dir_from_angles(azimuth: float, elevation: float) -> np.ndarray:
    ct = np.cos(elevation)
    return np.array([ct * np.sin(azimuth), -np.sin(elevation),
                     ct * np.cos(azimuth)])


def _pano_bilinear(pano: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Sample an equirectangular raster along unit directions (..., 3);
    wraps in azimuth, clamps at the poles."""
    h, w = pano.shape[:2]
    theta = np.arcsin(np.clip(-dirs[..., 1], -1.0, 1.0))
    phi = np.arctan2(dirs[..., 0], dirs[..., 2])
    x = (phi + np.pi) / (2 * np.pi) * w - 0.5
    y = (np.pi / 2 - theta) / np.pi * h - 0.5
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    xa = np.mod(x0, w)
    xb = np.mod(x0 + 1, w)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    top = pano[ya, xa] * (1 - fx) + pano[ya, xb] * fx
    bot = pano[yb, xa] * (1 - fx) + pano[yb, xb] * fx
    return top * (1 - fy) + bot * fy


def project_rectilinear(pano_img: HdrImage | LdrImage, azimuth: float,
                        elevation: float, fov: float,
                        width: int = SAMPLE_WIDTH,
                        height: int = SAMPLE_HEIGHT) -> LdrImage:
    """Pinhole reprojection of a panorama with bilinear interpolation."""
    forward = _dir_from_angles(azimuth, elevation)
    up = np.array([0.0, -1.0, 0.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        right = np.array([1.0, 0.0, 0.0])
        nr = 1.0
    right = right / nr
    down = np.cross(forward, right)
    f = (width / 2.0) / np.tan(fov / 2.0)
    xs = (np.arange(width) + 0.5 - width / 2.0) / f
    ys = (np.arange(height) + 0.5 - height / 2.0) / f
    dirs = (forward[None, None, :]
            + right[None, None, :] * xs[None, :, None]
            + down[None, None, :] * ys[:, None, None])
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    if isinstance(pano_img, LdrImage):
        vals = _pano_bilinear(pano_img.data.astype(np.float64), dirs)
        return LdrImage(np.floor(vals + 0.5).clip(0, 255).astype(np.uint8))
    vals = _pano_bilinear(pano_img.data.astype(np.float64), dirs)
    return tonemap(HdrImage(np.maximum(vals, 0).astype(np.float32)), 1 / 2.2)


def sample_panorama(pano: Panorama, n: int, seed: int = 0,
                    panorama_id: str = "") -> list[RectilinearSample]:
    """n stratified-azimuth random rectilinear views of a panorama.

    Azimuth strata split [0, 2pi); elevation is uniform in [-pi/6, pi/6] and
    field of view uniform in [pi/3, pi/2]. Deterministic per seed.
    """
    out = []
    for i in range(n):
        u_az = rand(seed, i, 0)
        u_el = rand(seed, i, 1)
        u_fov = rand(seed, i, 2)
        azimuth = 2 * np.pi * (i + u_az) / n
        elevation = -np.pi / 6 + u_el * (np.pi / 3)
        fov = np.pi / 3 + u_fov * (np.pi / 2 - np.pi / 3)
        img = project_rectilinear(pano.image, azimuth, elevation, fov)
        out.append(RectilinearSample(image=img, panorama_id=panorama_id,
                                     azimuth=azimuth, elevation=elevation,
                                     fov=fov))
    return out


# ---------------------------------------------------------------------------
# Similarity features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageFeatures:
    """Per-image feature maps and histograms entering Eq-style pair features."""

    gc: np.ndarray   # (h, w, 3) sky / vertical / ground scores
    om: np.ndarray   # (h, w, 8) dominant line-orientation bins
    lc: np.ndarray   # (h, w, 2) emitter probability and its complement
    sp: np.ndarray   # (80,) two-level gray spatial pyramid, L1-normalized
    hist_h: np.ndarray
    hist_s: np.ndarray
    hist_v: np.ndarray


@dataclass(frozen=True)
class SimilarityFeatures:
    vector: np.ndarray  # (7,) in [0, 1], ordered as FEATURE_NAMES

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (7,):
            raise ValidationError("similarity feature vector must have 7 entries")
        if v.min() < -1e-9 or v.max() > 1 + 1e-9:
            raise ValidationError("similarity features must lie in [0, 1]")
        object.__setattr__(self, "vector", v)


def _geometric_context(rgb: np.ndarray) -> np.ndarray:
    """Tiny fixed logistic sky/vertical/ground model on color and position."""
    h, w = rgb.shape[:2]
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y_norm = np.broadcast_to((np.arange(h) / max(h - 1, 1))[:, None], (h, w))
    sky = 2.5 * b - 1.0 * r - 0.5 * g + 2.0 * (1 - y_norm) - 1.5
    ground = 1.2 * g + 0.5 * r - 1.5 * b + 2.0 * y_norm - 1.5
    vertical = np.zeros_like(sky) + 0.2
    z = np.stack([sky, vertical, ground], axis=-1)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _orientation_map(gray: np.ndarray, bins: int = 8) -> np.ndarray:
    h, w = gray.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    gx[:, 1:-1] = 0.5 * (gray[:, 2:] - gray[:, :-2])
    gy[1:-1, :] = 0.5 * (gray[2:, :] - gray[:-2, :])
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx) + 0.5 * np.pi, np.pi)  # line orientation
    idx = np.minimum((ang / np.pi * bins).astype(int), bins - 1)
    out = np.zeros((h, w, bins))
    strong = mag > 0.02
    ys, xs = np.nonzero(strong)
    out[ys, xs, idx[ys, xs]] = 1.0
    return out


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = mx - mn
    h = np.zeros_like(mx)
    mask = d > 1e-12
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    rc = np.where(mask, (mx - r) / np.maximum(d, 1e-12), 0.0)
    gc = np.where(mask, (mx - g) / np.maximum(d, 1e-12), 0.0)
    bc = np.where(mask, (mx - b) / np.maximum(d, 1e-12), 0.0)
    h = np.where((mx == r) & mask, bc - gc, h)
    h = np.where((mx == g) & mask, 2.0 + rc - bc, h)
    h = np.where((mx == b) & mask, 4.0 + gc - rc, h)
    h = np.mod(h / 6.0, 1.0)
    s = np.where(mx > 1e-12, d / np.maximum(mx, 1e-12), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hist(vals: np.ndarray, bins: int = 32) -> np.ndarray:
    h, _ = np.histogram(vals.ravel(), bins=bins, range=(0.0, 1.0))
    h = h.astype(np.float64)
    total = h.sum()
    return h / total if total > 0 else h


def _spatial_pyramid(gray: np.ndarray, bins: int = 16) -> np.ndarray:
    h, w = gray.shape
    parts = [np.histogram(gray.ravel(), bins=bins, range=(0, 1))[0]]
    for qy in range(2):
        for qx in range(2):
            cell = gray[qy * h // 2:(qy + 1) * h // 2 or h,
                        qx * w // 2:(qx + 1) * w // 2 or w]
            parts.append(np.histogram(cell.ravel(), bins=bins, range=(0, 1))[0])
    v = np.concatenate(parts).astype(np.float64)
    total = v.sum()
    return v / total if total > 0 else v


def compute_features(img: LdrImage,
                     clf: LightClassifier | None = None) -> ImageFeatures:
    rgb = img.data.astype(np.float64) / 255.0
    gray = luminance(rgb)
    if clf is not None:
        n_seg = min(200, img.width * img.height)
        prob = probability_map(img, clf, n_segments=n_seg)
    else:
        prob = np.full(gray.shape, 0.5)
    hsv = _rgb_to_hsv(rgb)
    return ImageFeatures(
        gc=_geometric_context(rgb),
        om=_orientation_map(gray),
        lc=np.stack([prob, 1.0 - prob], axis=-1),
        sp=_spatial_pyramid(gray),
        hist_h=_hist(hsv[..., 0]),
        hist_s=_hist(hsv[..., 1]),
        hist_v=_hist(hsv[..., 2]),
    )


def _nd(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-pixel dot product of epsilon-padded, L2-normalized vectors;
    the larger map is downsampled to the smaller one's size."""
    ha, wa = a.shape[:2]
    hb, wb = b.shape[:2]
    if ha * wa > hb * wb:
        a = resize_bilinear(a, wb, hb)
    elif hb * wb > ha * wa:
        b = resize_bilinear(b, wa, ha)
    a = a + 1e-12
    b = b + 1e-12
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return float(np.clip((a * b).sum(-1).mean(), 0.0, 1.0))


def _hi(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.minimum(a, b).sum())


def similarity(a: ImageFeatures, b: ImageFeatures) -> SimilarityFeatures:
    """Seven pairwise similarities: normalized dot products for the map
    features, histogram intersections for the histogram features."""
    vec = np.array([
        _nd(a.gc, b.gc),
        _nd(a.om, b.om),
        _nd(a.lc, b.lc),
        _hi(a.sp, b.sp),
        _hi(a.hist_h, b.hist_h),
        _hi(a.hist_s, b.hist_s),
        _hi(a.hist_v, b.hist_v),
    ])
    return SimilarityFeatures(np.clip(vec, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Render-based IBL distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IblDistanceProbe:
    """Column-vectorized probe renders, one column per annotated source."""

    renders: np.ndarray  # (pixels, n_sources), nonnegative
    panorama_id: str = ""

    def __post_init__(self) -> None:
        r = np.asarray(self.renders, dtype=np.float64)
        if r.ndim != 2 or r.shape[1] < 1:
            raise ValidationError("probe needs at least one rendered source")
        if (r < 0).any():
            raise ValidationError("probe renders must be nonnegative")
        object.__setattr__(self, "renders", r)


def probe_scene_objects() -> list[InsertedObject]:
    """Canonical probe: nine spheres (3x3 grid of distinct diffuse albedos).

    The renderer is Lambertian-only, so material variety is realized through
    albedo levels and tints rather than specular models.
    """
    v, f = icosphere(1)
    levels = [0.2, 0.5, 0.8]
    tints = [np.array([1.0, 0.9, 0.8]), np.array([0.9, 1.0, 0.9]),
             np.array([0.8, 0.9, 1.0])]
    objs = []
    for row in range(3):
        for col in range(3):
            albedo = np.clip(levels[row] * tints[col], 0, 1)
            objs.append(InsertedObject(
                vertices=v, faces=f, albedo=albedo,
                translation=np.array([(col - 1) * 1.1, (row - 1) * 1.1, 4.0]),
                scale=0.45))
    return objs


def _probe_scene() -> SceneModel:
    from .geometry import fallback_camera
    depth = DepthMap(np.full((64, 64), 12.0))
    albedo = HdrImage(np.full((64, 64, 3), 0.4, dtype=np.float32))
    cam = fallback_camera(64, 64, f_factor=1.0)
    return SceneModel(camera=cam, depth=depth, albedo=albedo, lights=(),
                      response_gamma=1.0)


def build_probe(pano: Panorama, panorama_id: str = "",
                spp: int = 24, seed: int = 11) -> IblDistanceProbe:
    """Render the probe scene once per annotated source of the panorama,
    each source realized as a masked unit-radiance image-based light."""
    if not pano.annotations:
        raise ValidationError(f"panorama {panorama_id!r} has no annotated sources")
    if isinstance(pano.image, LdrImage):
        base = pano.image.data.astype(np.float64) / 255.0
    else:
        base = pano.image.data.astype(np.float64)
    h, w = base.shape[:2]
    lights = []
    for src in pano.annotations:
        mask = polygon_mask((h, w), src.polygon)
        masked = np.where(mask[..., None], np.maximum(base, 1e-3), 0.0)
        lights.append(IblLight(panorama=HdrImage(masked.astype(np.float32)),
                               rotation=np.eye(3), intensity=np.ones(3)))
    scene = _probe_scene()
    basis = basis_render(scene, objects=tuple(probe_scene_objects()),
                         settings=RenderSettings(spp=spp, seed=seed,
                                                 max_bounces=2),
                         lights_override=tuple(lights))
    cols = [b.data.astype(np.float64).ravel() for b in basis.images]
    return IblDistanceProbe(renders=np.stack(cols, axis=1),
                            panorama_id=panorama_id)


def ibl_distance(probe_i: IblDistanceProbe, probe_j: IblDistanceProbe) -> float:
    """Minimum rendered difference over per-source intensities, computed as
    the smallest singular value of the stacked matrix [P_i, -P_j].

    Each probe's render block is normalized by its Frobenius norm first, so
    the distance is invariant to a global intensity rescaling of either IBL.
    """
    pi = probe_i.renders
    pj = probe_j.renders
    ni = np.linalg.norm(pi)
    nj = np.linalg.norm(pj)
    if ni <= 0 or nj <= 0:
        raise ValidationError("probe render block is identically zero")
    m = np.concatenate([pi / ni, -pj / nj], axis=1)
    if m.shape[0] < m.shape[1]:
        raise ValidationError("probe has fewer pixels than sources")
    return float(np.linalg.svd(m, compute_uv=False)[-1])


# ---------------------------------------------------------------------------
# 1-slack ranking SVM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankModel:
    w: np.ndarray  # (7,)
    C: float
    trace: tuple[float, ...] = field(default_factory=tuple)

    def score(self, x: SimilarityFeatures | np.ndarray) -> float:
        v = x.vector if isinstance(x, SimilarityFeatures) else np.asarray(x)
        return float(self.w @ v)

    def to_json(self) -> dict:
        return {"w": self.w.tolist(), "C": self.C, "trace": list(self.trace)}

    @classmethod
    def from_json(cls, doc: dict) -> "RankModel":
        return cls(w=np.asarray(doc["w"], dtype=np.float64),
                   C=float(doc["C"]), trace=tuple(doc.get("trace", ())))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str) -> "RankModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _solve_qp(cuts_u: list[np.ndarray], cuts_b: list[float], c_slack: float,
              x0: np.ndarray, dim: int) -> np.ndarray:
    """min ||w||^2 + C xi  s.t.  w.u_m + xi >= b_m, xi >= 0."""

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        w, xi = theta[:dim], theta[dim]
        g = np.concatenate([2.0 * w, [c_slack]])
        return float(w @ w + c_slack * xi), g

    cons = [{"type": "ineq",
             "fun": lambda th, u=u, b=b: th[:dim] @ u + th[dim] - b,
             "jac": lambda th, u=u: np.concatenate([u, [1.0]])}
            for u, b in zip(cuts_u, cuts_b)]
    res = minimize(fun, x0, jac=True, method="SLSQP", constraints=cons,
                   bounds=[(None, None)] * dim + [(0.0, None)],
                   options={"maxiter": 200, "ftol": 1e-12})
    return res.x


def train_ranker(triples: list[tuple[np.ndarray, np.ndarray, float]],
                 c_slack: float = 100.0, tol: float = 1e-4,
                 max_cuts: int = 100) -> RankModel:
    """Cutting-plane optimization of the 1-slack ranking SVM.

    Each triple (x_better, x_worse, delta) demands
    w.x_better >= w.x_worse + delta - xi; aggregated most-violated
    constraints are added until the violation falls below tol.
    """
    if not triples:
        raise ValidationError("no ranking triples")
    deltas = np.array([t[2] for t in triples], dtype=np.float64)
    if (deltas < 0).any():
        raise ValidationError("margins must be nonnegative")
    diffs = np.stack([
        (t[0].vector if isinstance(t[0], SimilarityFeatures) else np.asarray(t[0]))
        - (t[1].vector if isinstance(t[1], SimilarityFeatures) else np.asarray(t[1]))
        for t in triples]).astype(np.float64)
    n, dim = diffs.shape
    if c_slack <= 0:
        return RankModel(w=np.zeros(dim), C=c_slack, trace=(0.0,))

    def true_objective(w: np.ndarray) -> float:
        viol = np.maximum(deltas - diffs @ w, 0.0)
        return float(w @ w + c_slack * viol.mean())

    theta = np.zeros(dim + 1)
    cuts_u: list[np.ndarray] = []
    cuts_b: list[float] = []
    trace: list[float] = [true_objective(theta[:dim])]
    for _ in range(max_cuts):
        w, xi = theta[:dim], theta[dim]
        violated = (deltas - diffs @ w) > 0
        u = diffs[violated].sum(axis=0) / n if violated.any() else np.zeros(dim)
        b = float(deltas[violated].sum() / n) if violated.any() else 0.0
        violation = b - w @ u - xi
        trace.append(min(trace[-1], true_objective(w)))
        if violation <= tol:
            break
        cuts_u.append(u)
        cuts_b.append(b)
        theta = _solve_qp(cuts_u, cuts_b, c_slack, theta, dim)
    w = theta[:dim]
    trace.append(min(trace[-1], true_objective(w)))
    return RankModel(w=w, C=c_slack, trace=tuple(trace))


# ---------------------------------------------------------------------------
# Ranking inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GalleryEntry:
    panorama_id: str
    views: tuple[ImageFeatures, ...]


def rank_ibls(input_features: ImageFeatures, gallery: list[GalleryEntry],
              model: RankModel, k: int) -> list[str]:
    """Top-k panorama ids by descending ranking score.

    A panorama's score is the maximum over its sampled views; ties break
    toward the lexicographically smaller panorama id.
    """
    if not gallery:
        raise ValidationError("empty IBL gallery")
    if k > len(gallery):
        warnings.warn(f"k={k} exceeds gallery size {len(gallery)}; clamping")
        k = len(gallery)
    if k <= 0:
        return []
    scored = []
    for entry in gallery:
        views = [model.score(similarity(input_features, vf))
                 for vf in entry.views]
        scored.append((-max(views), entry.panorama_id))
    scored.sort()
    return [pid for _, pid in scored[:k]]
