"""Deterministic synthetic fixture data: emitter training scenes, an
indoor/outdoor gallery, annotated panoramas, RGBD exemplars, ground-truth box
scenes, and a small catalog of insertable objects.

Everything is generated from fixed seeds so pipelines built on these fixtures
are exactly reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .assets import (AnnotatedSource, Panorama, QuadLight, SceneModel,
                     save_annotations, write_pfm)
from .geometry import DepthMap, PinholeCamera, fallback_camera
from .images import HdrImage, LdrImage, tonemap
from .light_detect import (LightClassifier, features_all, slic,
                           train_light_classifier)
from .meshes import box, icosphere, write_obj


# ---------------------------------------------------------------------------
# Emitter scenes (light classifier training data)
# ---------------------------------------------------------------------------

def emitter_scene(seed: int, width: int = 128,
                  height: int = 96) -> tuple[LdrImage, np.ndarray]:
    """Indoor-ish scene with smooth warm emitter blobs (mostly high in the
    frame) and textured bright non-emitting patches. Returns the image and
    the boolean emitter mask."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 0.12 + 0.10 * (ys / height) + 0.03 * np.sin(xs / width * 6.0)
    img = np.stack([base * 1.0, base * 0.95, base * 0.9], axis=-1)
    img += rng.normal(0.0, 0.02, img.shape)

    # bright but textured non-emitters (paper, posters, sunlit wall patches);
    # their luminance overlaps the emitters' so thresholding cannot separate
    for _ in range(rng.integers(3, 6)):
        w = int(rng.integers(12, 30))
        h = int(rng.integers(8, 22))
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, height - h))
        level = rng.uniform(0.55, 0.95)
        yy, xx = np.mgrid[0:h, 0:w]
        texture = 0.16 * np.sin(xx * rng.uniform(0.8, 2.0)
                                + rng.uniform(0, 6.28)) \
            + rng.normal(0.0, 0.10, (h, w))
        patch = np.clip(level + texture, 0.0, 1.0)
        tint = np.array([1.0, 1.0, rng.uniform(0.9, 1.1)])
        img[y0:y0 + h, x0:x0 + w] = patch[..., None] * tint

    mask = np.zeros((height, width), dtype=bool)
    for _ in range(rng.integers(2, 5)):
        if rng.uniform() < 0.5:
            # saturated rectangular panel (ceiling fixture, window)
            w = int(rng.integers(10, 26))
            h = int(rng.integers(5, 12))
            x0 = int(rng.integers(1, width - w - 1))
            y0 = int(rng.integers(1, max(2, int(0.55 * height) - h)))
            level = rng.uniform(0.93, 1.0)
            tint = np.array([1.0, rng.uniform(0.92, 1.0),
                             rng.uniform(0.82, 0.95)])
            img[y0:y0 + h, x0:x0 + w] = np.maximum(
                img[y0:y0 + h, x0:x0 + w], level * tint)
            mask[y0:y0 + h, x0:x0 + w] = True
            continue
        rx = rng.uniform(5, 12)
        ry = rng.uniform(4, 9)
        cx = rng.uniform(rx + 1, width - rx - 1)
        cy = rng.uniform(ry + 1, 0.6 * height)
        d2 = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2
        core = d2 < 1.0
        glow = np.exp(-0.5 * np.maximum(d2 - 1.0, 0.0) * 4.0)
        level = rng.uniform(0.72, 1.0)
        tint = np.array([1.0, rng.uniform(0.9, 0.98), rng.uniform(0.75, 0.9)])
        lamp = level * glow[..., None] * tint
        img = np.where(core[..., None] | (glow[..., None] > 0.05),
                       np.maximum(img, lamp), img)
        mask |= core
    return LdrImage(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)), mask


def _labeled_samples(img: LdrImage, mask: np.ndarray,
                     n_segments: int) -> list[tuple[np.ndarray, bool]]:
    seg = slic(img, n_segments=n_segments)
    feats = features_all(img, seg)
    return [(feats[s], bool(mask[seg.labels == s].mean() >= 0.5))
            for s in range(seg.n)]


def rendered_emitter_scene(seed: int, spp: int = 48
                           ) -> tuple[LdrImage, np.ndarray]:
    """Rendered box room labeled by the ground-truth light quad projection
    plus saturated pixels (the classifier's positive class is superpixels
    emitting or reflecting a significant amount of light)."""
    from .features import polygon_mask
    from .geometry import project

    fx = box_scene(seed=seed, spp=spp)
    corners = project(fx.scene.camera, fx.true_quad)
    mask = polygon_mask((fx.image.height, fx.image.width), corners)
    mask |= fx.image.data.max(axis=2) >= 248
    return fx.image, mask


def emitter_samples(n_scenes: int = 10, seed: int = 100,
                    n_segments: int = 80, limit: int | None = None,
                    n_rendered: int = 4
                    ) -> list[tuple[np.ndarray, bool]]:
    """Per-superpixel (feature, is_emitter) pairs over generated scenes plus
    labeled renders of ground-truth rooms (so render statistics are covered).

    With limit set, keeps every positive and a seeded random subset of
    negatives to reach exactly limit samples.
    """
    samples: list[tuple[np.ndarray, bool]] = []
    for i in range(n_scenes):
        img, mask = emitter_scene(seed + i)
        samples.extend(_labeled_samples(img, mask, n_segments))
    for i in range(n_rendered):
        img, mask = rendered_emitter_scene(seed + 50 + i)
        samples.extend(_labeled_samples(img, mask, n_segments))
    if limit is not None and len(samples) > limit:
        rng = np.random.default_rng(seed)
        pos = [s for s in samples if s[1]]
        neg = [s for s in samples if not s[1]]
        n_neg = max(0, limit - len(pos))
        idx = rng.permutation(len(neg))[:n_neg]
        samples = pos + [neg[i] for i in idx]
        samples = [samples[i] for i in rng.permutation(len(samples))]
    return samples


@lru_cache(maxsize=2)
def default_light_classifier(seed: int = 100) -> LightClassifier:
    return train_light_classifier(emitter_samples(seed=seed), seed=seed)


# ---------------------------------------------------------------------------
# Indoor / outdoor gallery
# ---------------------------------------------------------------------------

def outdoor_image(seed: int, width: int = 128, height: int = 96) -> LdrImage:
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    horizon = rng.uniform(0.45, 0.6) * height
    sky_t = np.clip(ys / horizon, 0, 1)
    sky = np.stack([0.35 + 0.25 * sky_t, 0.55 + 0.15 * sky_t,
                    0.95 - 0.15 * sky_t], axis=-1)
    gtone = rng.uniform(0.3, 0.6)
    ground = np.stack([0.35 * gtone + 0.1, 0.5 * gtone + 0.15, 0.25 * gtone],
                      axis=-1) * np.ones((height, width, 3))
    ground += rng.normal(0, 0.04, ground.shape)
    img = np.where((ys < horizon)[..., None], sky, ground)
    sx = rng.uniform(0.2, 0.8) * width
    sy = rng.uniform(0.1, 0.5) * horizon
    d2 = (xs - sx) ** 2 + (ys - sy) ** 2
    img = np.maximum(img, np.exp(-d2 / (2 * 4.0 ** 2))[..., None]
                     * np.array([1.0, 0.97, 0.85]))
    for _ in range(rng.integers(1, 4)):  # simple tree/bush silhouettes
        tx = rng.uniform(5, width - 5)
        tw = rng.uniform(3, 9)
        th = rng.uniform(8, 25)
        trunk = (np.abs(xs - tx) < tw) & (ys > horizon - th) & (ys < horizon + 3)
        img[trunk] = [0.1, 0.25 * rng.uniform(0.5, 1.2), 0.08]
    return LdrImage(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))


def indoor_image(seed: int, width: int = 128, height: int = 96) -> LdrImage:
    img, _ = emitter_scene(seed, width, height)
    return img


def classify_gallery(n_per_class: int = 10,
                     seed: int = 300) -> list[tuple[LdrImage, str]]:
    gallery = []
    for i in range(n_per_class):
        gallery.append((indoor_image(seed + i), "indoor"))
        gallery.append((outdoor_image(seed + 1000 + i), "outdoor"))
    return gallery


# ---------------------------------------------------------------------------
# Annotated panoramas
# ---------------------------------------------------------------------------

def synthetic_panorama(seed: int, height: int = 48) -> Panorama:
    """HDR equirectangular panorama with rectangular area sources (annotated
    with distance classes) over a dim ambient base."""
    rng = np.random.default_rng(seed)
    width = 2 * height
    ys = (np.arange(height) / height)[:, None, None]
    base = (0.06 + 0.1 * (1 - ys)) * np.ones((height, width, 3))
    base *= np.array([1.0, 0.97, 0.92]) * rng.uniform(0.7, 1.3)
    sources = []
    for _ in range(rng.integers(1, 4)):
        w = int(rng.integers(6, 18))
        h = int(rng.integers(4, 12))
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, max(1, height // 2 - h)))
        strength = rng.uniform(2.0, 8.0)
        tint = np.array([1.0, rng.uniform(0.85, 1.0), rng.uniform(0.7, 0.95)])
        base[y0:y0 + h, x0:x0 + w] = strength * tint
        poly = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]],
                        dtype=np.float64)
        distance = ("close", "medium", "far")[int(rng.integers(0, 3))]
        sources.append(AnnotatedSource(polygon=poly, distance_class=distance))
    return Panorama(HdrImage(base.astype(np.float32)), tuple(sources))


def panorama_gallery(n: int = 6, seed: int = 500) -> list[tuple[str, Panorama]]:
    return [(f"pano_{seed + i:04d}", synthetic_panorama(seed + i))
            for i in range(n)]


# ---------------------------------------------------------------------------
# RGBD exemplars and ground-truth box scenes
# ---------------------------------------------------------------------------

def _box_depth(cam: PinholeCamera, width: int, height: int, z_back: float,
               x_left: float, x_right: float, y_floor: float,
               y_ceil: float) -> np.ndarray:
    """Depth map of an axis-aligned box interior seen from the origin."""
    cx, cy = cam.c0
    rx = (np.arange(width) - cx) / cam.f
    ry = (np.arange(height) - cy) / cam.f
    rx = np.broadcast_to(rx[None, :], (height, width))
    ry = np.broadcast_to(ry[:, None], (height, width))
    depth = np.full((height, width), z_back, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for plane, coord in ((x_left, rx), (x_right, rx),
                             (y_floor, ry), (y_ceil, ry)):
            t = plane / np.where(np.abs(coord) < 1e-12, np.nan, coord)
            t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
            depth = np.minimum(depth, t)
    return depth


@dataclass(frozen=True)
class BoxFixture:
    scene: SceneModel          # ground-truth scene (true light, gamma)
    image: LdrImage            # tonemapped render = the pipeline input
    true_quad: np.ndarray      # (4, 3) light corners
    hdr: HdrImage              # linear render before tonemapping


def _box_albedo(depth: np.ndarray, cam: PinholeCamera, z_back: float,
                x_left: float, x_right: float, y_floor: float,
                y_ceil: float) -> np.ndarray:
    h, w = depth.shape
    cx, cy = cam.c0
    rx = np.broadcast_to(((np.arange(w) - cx) / cam.f)[None, :], (h, w))
    ry = np.broadcast_to(((np.arange(h) - cy) / cam.f)[:, None], (h, w))
    x = depth * rx
    y = depth * ry
    alb = np.full((h, w, 3), 0.62)            # back wall
    tol = 1e-6
    alb[np.abs(x - x_left) < tol + 1e-3 * np.abs(x_left)] = [0.55, 0.28, 0.22]
    alb[np.abs(x - x_right) < tol + 1e-3 * np.abs(x_right)] = [0.24, 0.38, 0.55]
    alb[np.abs(y - y_floor) < tol + 1e-3 * np.abs(y_floor)] = [0.45, 0.40, 0.33]
    alb[np.abs(y - y_ceil) < tol + 1e-3 * np.abs(y_ceil)] = [0.75, 0.75, 0.72]
    return alb


def box_scene(seed: int = 0, width: int = 128, height: int = 96,
              spp: int = 128, light_intensity: float = 20.0,
              gamma: float = 1 / 2.2) -> BoxFixture:
    """Ground-truth box room with one ceiling area light, rendered and
    tonemapped into the pipeline's input image."""
    from .render import RenderSettings, render

    rng = np.random.default_rng(seed)
    cam = fallback_camera(width, height, f_factor=0.9)
    z_back = rng.uniform(3.6, 4.4)
    x_left = -rng.uniform(1.3, 1.7)
    x_right = rng.uniform(1.3, 1.7)
    y_floor = rng.uniform(1.0, 1.3)
    y_ceil = -rng.uniform(1.0, 1.3)
    depth = _box_depth(cam, width, height, z_back, x_left, x_right,
                       y_floor, y_ceil)
    albedo = _box_albedo(depth, cam, z_back, x_left, x_right, y_floor, y_ceil)

    # ceiling light hangs slightly below the ceiling plane, deep enough in the
    # room to project inside the view frustum
    gap = 0.04 * abs(y_ceil)
    lz0 = rng.uniform(2.7, 2.95)
    lw = rng.uniform(0.5, 0.8)
    ld = rng.uniform(0.35, 0.5)
    yq = y_ceil + gap
    quad = np.array([[-lw / 2, yq, lz0], [lw / 2, yq, lz0],
                     [lw / 2, yq, lz0 + ld], [-lw / 2, yq, lz0 + ld]])
    light = QuadLight(vertices=quad,
                      intensity=np.full(3, light_intensity))
    scene = SceneModel(camera=cam, depth=DepthMap(depth),
                       albedo=HdrImage(np.clip(albedo, 0, 1).astype(np.float32)),
                       lights=(light,), response_gamma=gamma)
    hdr = render(scene, settings=RenderSettings(spp=spp, seed=seed + 17))
    ldr = tonemap(hdr, gamma)
    return BoxFixture(scene=scene, image=ldr, true_quad=quad, hdr=hdr)


def rgbd_exemplars(n: int = 5, seed: int = 700,
                   width: int = 128, height: int = 96):
    """Shaded box rooms with known depth, for the depth-transfer prior."""
    from .depth_infer import RgbdExemplar

    out = []
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        cam = fallback_camera(width, height, f_factor=0.9)
        depth = _box_depth(cam, width, height,
                           z_back=rng.uniform(3.0, 5.0),
                           x_left=-rng.uniform(1.2, 1.8),
                           x_right=rng.uniform(1.2, 1.8),
                           y_floor=rng.uniform(0.9, 1.4),
                           y_ceil=-rng.uniform(0.9, 1.4))
        shade = 1.0 / depth
        shade = shade / shade.max()
        img = np.stack([shade, shade * 0.97, shade * 0.92], axis=-1)
        img += rng.normal(0, 0.01, img.shape)
        ldr = LdrImage(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))
        out.append(RgbdExemplar(image=ldr, depth=depth))
    return out


# ---------------------------------------------------------------------------
# Object catalog
# ---------------------------------------------------------------------------

OBJECT_CATALOG = ("cube", "sphere", "pedestal")


def write_object_catalog(dirpath: str) -> dict[str, str]:
    """Materialize the bundled OBJ fixtures plus material sidecars."""
    os.makedirs(dirpath, exist_ok=True)
    paths = {}
    v, f = box((1.0, 1.0, 1.0))
    write_obj(os.path.join(dirpath, "cube.obj"), v, f)
    with open(os.path.join(dirpath, "cube.json"), "w") as fh:
        json.dump({"albedo": [0.75, 0.2, 0.15]}, fh)
    v, f = icosphere(2)
    write_obj(os.path.join(dirpath, "sphere.obj"), v, f)
    with open(os.path.join(dirpath, "sphere.json"), "w") as fh:
        json.dump({"albedo": [0.2, 0.45, 0.7]}, fh)
    v, f = box((0.6, 1.4, 0.6))
    write_obj(os.path.join(dirpath, "pedestal.obj"), v, f)
    with open(os.path.join(dirpath, "pedestal.json"), "w") as fh:
        json.dump({"albedo": [0.6, 0.6, 0.55]}, fh)
    for name in OBJECT_CATALOG:
        paths[name] = os.path.join(dirpath, f"{name}.obj")
    return paths


# ---------------------------------------------------------------------------
# Dataset directories for the training CLIs
# ---------------------------------------------------------------------------

def write_light_training_manifest(dirpath: str, n_scenes: int = 10,
                                  seed: int = 100) -> str:
    """Emitter scenes + masks + manifest.json for `trainlights`."""
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for i in range(n_scenes):
        img, mask = emitter_scene(seed + i)
        img_path = os.path.join(dirpath, f"scene_{i:03d}.png")
        mask_path = os.path.join(dirpath, f"scene_{i:03d}_mask.png")
        from .assets import write_png
        write_png(img, img_path)
        write_png(LdrImage(np.repeat(mask[..., None].astype(np.uint8) * 255,
                                     3, axis=2)), mask_path)
        entries.append({"image": os.path.basename(img_path),
                        "mask": os.path.basename(mask_path)})
    manifest = os.path.join(dirpath, "manifest.json")
    with open(manifest, "w") as fh:
        json.dump({"images": entries, "n_segments": 80}, fh, indent=1)
    return manifest


def write_panorama_dataset(dirpath: str, n: int = 6, seed: int = 500) -> str:
    """Panorama PFMs + annotation sidecars + manifest.json for `trainrank`."""
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for pid, pano in panorama_gallery(n=n, seed=seed):
        img_path = os.path.join(dirpath, f"{pid}.pfm")
        write_pfm(pano.image, img_path)
        save_annotations(pano.annotations,
                         os.path.join(dirpath, f"{pid}.json"))
        entries.append({"id": pid, "image": os.path.basename(img_path),
                        "annotations": f"{pid}.json"})
    manifest = os.path.join(dirpath, "manifest.json")
    with open(manifest, "w") as fh:
        json.dump({"panoramas": entries, "n_views": 3, "seed": seed}, fh,
                  indent=1)
    return manifest
