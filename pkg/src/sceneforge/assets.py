"""Bit-exact serialization of images, scene models, panoramas, and annotations.

HDR rasters travel as PFM ("PF" color, "Pf" grayscale for depth and masks),
LDR rasters as PNG, and scene models as a scene.json directory with PFM
payloads next to it. All loads validate structural invariants.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import DepthMap, PinholeCamera
from .images import FormatError, HdrImage, LdrImage, ValidationError, _freeze

DISTANCE_CLASSES = ("close", "medium", "far", "infinite")


# ---------------------------------------------------------------------------
# Light sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadLight:
    """Planar quadrilateral area emitter inside the view frustum."""

    vertices: np.ndarray   # (4, 3) camera-space corners, coplanar
    intensity: np.ndarray  # (3,) nonnegative RGB scale

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        i = np.ascontiguousarray(self.intensity, dtype=np.float64)
        if v.shape != (4, 3):
            raise ValidationError(f"quad light expects 4 vertices, got {v.shape}")
        if i.shape != (3,) or (i < 0).any() or not np.isfinite(i).all():
            raise ValidationError("light intensity must be nonnegative finite RGB")
        n = np.cross(v[1] - v[0], v[2] - v[0])
        area = np.linalg.norm(n)
        if area < 1e-12:
            raise ValidationError("quad light is degenerate (zero area)")
        dist = abs((v[3] - v[0]) @ (n / area))
        extent = max(np.linalg.norm(v[k] - v[0]) for k in range(1, 4))
        if dist > 1e-6 * max(extent, 1.0):
            raise ValidationError("quad light vertices are not coplanar")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "intensity", _freeze(i))


@dataclass(frozen=True)
class IblLight:
    """Spherical image-based emitter surrounding the scene."""

    panorama: HdrImage     # equirectangular radiance, width = 2 * height
    rotation: np.ndarray   # (3, 3): columns = panorama axes in camera coords
    intensity: np.ndarray  # (3,) nonnegative RGB scale

    def __post_init__(self) -> None:
        if self.panorama.width != 2 * self.panorama.height:
            raise ValidationError("IBL panorama must be equirectangular (w = 2h)")
        r = np.ascontiguousarray(self.rotation, dtype=np.float64)
        i = np.ascontiguousarray(self.intensity, dtype=np.float64)
        if r.shape != (3, 3) or np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ValidationError("IBL rotation must be orthonormal 3x3")
        if i.shape != (3,) or (i < 0).any() or not np.isfinite(i).all():
            raise ValidationError("light intensity must be nonnegative finite RGB")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "intensity", _freeze(i))


LightSource = QuadLight | IblLight


# ---------------------------------------------------------------------------
# Scene model and panoramas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneModel:
    """Complete editable reconstruction of a photograph."""

    camera: PinholeCamera
    depth: DepthMap
    albedo: HdrImage
    lights: tuple[LightSource, ...]
    response_gamma: float

    def __post_init__(self) -> None:
        if (self.depth.width, self.depth.height) != (self.albedo.width,
                                                     self.albedo.height):
            raise ValidationError(
                f"depth {self.depth.width}x{self.depth.height} and albedo "
                f"{self.albedo.width}x{self.albedo.height} dimensions differ")
        if self.albedo.data.max() > 1.0 + 1e-6:
            raise ValidationError("albedo must lie in [0, 1] per channel")
        if not self.response_gamma > 0:
            raise ValidationError("response_gamma must be positive")
        object.__setattr__(self, "lights", tuple(self.lights))
        object.__setattr__(self, "response_gamma", float(self.response_gamma))

    @property
    def width(self) -> int:
        return self.depth.width

    @property
    def height(self) -> int:
        return self.depth.height


@dataclass(frozen=True)
class AnnotatedSource:
    polygon: np.ndarray  # (n, 2) pixel-space contour on the panorama
    distance_class: str

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.polygon, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValidationError("annotation polygon needs at least 3 vertices")
        if self.distance_class not in DISTANCE_CLASSES:
            raise ValidationError(
                f"distance class {self.distance_class!r} not in {DISTANCE_CLASSES}")
        object.__setattr__(self, "polygon", _freeze(p))


@dataclass(frozen=True)
class Panorama:
    image: HdrImage | LdrImage
    annotations: tuple[AnnotatedSource, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.image.width != 2 * self.image.height:
            raise ValidationError(
                f"panorama must be full-sphere equirectangular (width = 2 height), "
                f"got {self.image.width}x{self.image.height}")
        object.__setattr__(self, "annotations", tuple(self.annotations))


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def _read_pfm_raw(path: str) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4:
        raise FormatError(f"{path}: truncated PFM header")
    magic, dims, scale_s, payload = parts
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    try:
        w, h = (int(t) for t in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PFM header") from exc
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad PFM dimensions {w}x{h}")
    if scale >= 0:
        raise FormatError(f"{path}: big-endian PFM (scale {scale}) unsupported")
    count = w * h * channels
    if len(payload) < 4 * count:
        raise FormatError(f"{path}: PFM payload shorter than header implies")
    data = np.frombuffer(payload[:4 * count], dtype="<f4").reshape(h, w, channels)
    return data[::-1].copy(), channels  # file rows are bottom-up


def read_pfm(path: str) -> HdrImage:
    """Read a color PFM into an HdrImage (validates finiteness/nonnegativity)."""
    data, channels = _read_pfm_raw(path)
    if channels != 3:
        raise FormatError(f"{path}: expected color 'PF' data, found grayscale")
    bad = ~np.isfinite(data) | (data < 0)
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        y, x = flat // (data.shape[1] * 3), (flat // 3) % data.shape[1]
        raise ValidationError(
            f"{path}: invalid radiance at pixel ({x},{y}): {data[y, x].tolist()}")
    return HdrImage(data)


def write_pfm(img: HdrImage, path: str) -> None:
    """Write the canonical little-endian color PFM (scale -1.0, bottom-up rows)."""
    _write_pfm_payload(img.data.astype("<f4"), b"PF", path)


def read_pfm_gray(path: str) -> np.ndarray:
    """Read a grayscale 'Pf' file as an (h, w) float32 array (no sign checks)."""
    data, channels = _read_pfm_raw(path)
    if channels != 1:
        raise FormatError(f"{path}: expected grayscale 'Pf' data, found color")
    return data[..., 0]


def write_pfm_gray(data: np.ndarray, path: str) -> None:
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError(f"grayscale PFM expects (h, w) data, got {arr.shape}")
    _write_pfm_payload(arr[..., None], b"Pf", path)


def _write_pfm_payload(arr: np.ndarray, magic: bytes, path: str) -> None:
    h, w = arr.shape[:2]
    header = magic + b"\n" + f"{w} {h}".encode() + b"\n-1.0\n"
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(arr[::-1]).tobytes())
    except OSError as exc:
        raise OSError(f"writing PFM {path!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def read_png(path: str) -> LdrImage:
    with Image.open(path) as im:
        return LdrImage(np.asarray(im.convert("RGB"), dtype=np.uint8))


def write_png(img: LdrImage, path: str) -> None:
    Image.fromarray(img.data, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Annotation sidecars
# ---------------------------------------------------------------------------

def load_annotations(path: str) -> tuple[AnnotatedSource, ...]:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        sources = doc["sources"]
        return tuple(AnnotatedSource(np.asarray(s["polygon"], dtype=np.float64),
                                     s["distance"]) for s in sources)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed annotation sidecar: {exc}") from exc


def save_annotations(sources: tuple[AnnotatedSource, ...] | list, path: str) -> None:
    doc = {"sources": [{"polygon": np.asarray(s.polygon).tolist(),
                        "distance": s.distance_class} for s in sources]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_panorama(image_path: str) -> Panorama:
    """Load a panorama image plus its optional .json annotation sidecar."""
    if image_path.endswith(".pfm"):
        img: HdrImage | LdrImage = read_pfm(image_path)
    else:
        img = read_png(image_path)
    sidecar = os.path.splitext(image_path)[0] + ".json"
    ann = load_annotations(sidecar) if os.path.exists(sidecar) else ()
    return Panorama(img, ann)


# ---------------------------------------------------------------------------
# Scene directory
# ---------------------------------------------------------------------------

def save_scene(scene: SceneModel, dirpath: str) -> None:
    """Write scene.json plus PFM payloads; load_scene(save_scene(s)) == s."""
    os.makedirs(dirpath, exist_ok=True)
    write_pfm_gray(scene.depth.depth.astype(np.float32), os.path.join(dirpath, "depth.pfm"))
    write_pfm(scene.albedo, os.path.join(dirpath, "albedo.pfm"))
    lights_json = []
    n_ibl = 0
    for light in scene.lights:
        if isinstance(light, QuadLight):
            lights_json.append({
                "type": "quad",
                "vertices": light.vertices.tolist(),
                "intensity": light.intensity.tolist(),
            })
        else:
            name = f"ibl_{n_ibl}.pfm"
            n_ibl += 1
            write_pfm(light.panorama, os.path.join(dirpath, name))
            lights_json.append({
                "type": "ibl",
                "panorama": name,
                "rotation": light.rotation.ravel().tolist(),
                "intensity": light.intensity.tolist(),
            })
    doc = {
        "camera": {
            "f": scene.camera.f,
            "cx": scene.camera.c0[0],
            "cy": scene.camera.c0[1],
            "rotation": scene.camera.rotation.ravel().tolist(),
        },
        "depth": "depth.pfm",
        "albedo": "albedo.pfm",
        "gamma": scene.response_gamma,
        "lights": lights_json,
    }
    with open(os.path.join(dirpath, "scene.json"), "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scene(dirpath: str) -> SceneModel:
    """Load and validate a scene directory written by :func:`save_scene`."""
    path = os.path.join(dirpath, "scene.json")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc

    try:
        cam_doc = doc["camera"]
        rotation = np.asarray(cam_doc["rotation"], dtype=np.float64).reshape(3, 3)
        camera = PinholeCamera(f=float(cam_doc["f"]),
                               c0=(float(cam_doc["cx"]), float(cam_doc["cy"])),
                               rotation=rotation)
        depth = DepthMap(read_pfm_gray(os.path.join(dirpath, doc["depth"])))
        albedo = read_pfm(os.path.join(dirpath, doc["albedo"]))
        gamma = float(doc["gamma"])
        lights: list[LightSource] = []
        for entry in doc["lights"]:
            kind = entry.get("type")
            if kind == "quad":
                lights.append(QuadLight(
                    vertices=np.asarray(entry["vertices"], dtype=np.float64),
                    intensity=np.asarray(entry["intensity"], dtype=np.float64)))
            elif kind == "ibl":
                pano = read_pfm(os.path.join(dirpath, entry["panorama"]))
                lights.append(IblLight(
                    panorama=pano,
                    rotation=np.asarray(entry["rotation"],
                                        dtype=np.float64).reshape(3, 3),
                    intensity=np.asarray(entry["intensity"], dtype=np.float64)))
            else:
                raise FormatError(f"{path}: unknown light type tag {kind!r}")
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"{path}: malformed scene.json: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, (ValidationError, FormatError)):
            raise
        raise FormatError(f"{path}: malformed scene.json: {exc}") from exc

    return SceneModel(camera=camera, depth=depth, albedo=albedo,
                      lights=tuple(lights), response_gamma=gamma)
