"""Physically based Lambertian renderer over triangulated scene models.

Per-light basis renders come out of a single traced pass (shared paths, so
recombination noise is perfectly correlated), and the differential composite
of Eq-style additive insertion is a pure post-combination of three rasters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tracer
from .assets import IblLight, LightSource, QuadLight, SceneModel
from .geometry import triangulate
from .images import HdrImage, LdrImage, ValidationError, luminance


@dataclass(frozen=True)
class RenderSettings:
    spp: int = 64
    max_bounces: int = 16
    seed: int = 0
    resolution: tuple[int, int] | None = None  # (width, height), None = scene size
    rr_start: int = 3

    def __post_init__(self) -> None:
        if self.spp < 1:
            raise ValidationError("spp must be >= 1")
        if not 1 <= self.max_bounces <= tracer._MAX_BOUNCE_CAP:
            raise ValidationError(
                f"max_bounces must be in [1, {tracer._MAX_BOUNCE_CAP}]")


@dataclass(frozen=True)
class InsertedObject:
    """Rigid diffuse (optionally emissive) triangle mesh to composite in."""

    vertices: np.ndarray            # (n, 3) model space
    faces: np.ndarray               # (m, 3) int
    albedo: np.ndarray              # (3,) or (m, 3) in [0, 1]
    emission: np.ndarray | None = None  # (3,) or (m, 3) radiance, >= 0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValidationError("object scale must be positive and finite")
        if not np.isfinite(self.rotation).all() or not np.isfinite(self.translation).all():
            raise ValidationError("object pose must be finite")

    def world_vertices(self) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=np.float64)
        return (self.scale * v) @ np.asarray(self.rotation, dtype=np.float64).T \
            + np.asarray(self.translation, dtype=np.float64)

    def face_albedo(self) -> np.ndarray:
        a = np.asarray(self.albedo, dtype=np.float64)
        if a.ndim == 1:
            a = np.broadcast_to(a, (len(self.faces), 3))
        return np.clip(a, 0.0, 1.0)

    def face_emission(self) -> np.ndarray | None:
        if self.emission is None:
            return None
        e = np.asarray(self.emission, dtype=np.float64)
        if e.ndim == 1:
            e = np.broadcast_to(e, (len(self.faces), 3))
        if (e < 0).any():
            raise ValidationError("object emission must be nonnegative")
        return e


@dataclass(frozen=True)
class BasisSet:
    """One render per light source at unit intensity, in scene light order.

    With a purely emissive light model the no-light base image is identically
    black, so it is not stored. mask is the inserted-object coverage when
    objects were present.
    """

    images: tuple[HdrImage, ...]
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        dims = {(im.width, im.height) for im in self.images}
        if len(dims) > 1:
            raise ValidationError(f"basis images disagree on dimensions: {dims}")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.min() < 0 or m.max() > 1:
                raise ValidationError("object mask must lie in [0, 1]")
            object.__setattr__(self, "mask", m)
        object.__setattr__(self, "images", tuple(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def stacked(self) -> np.ndarray:
        """(n, pixels*3) float32 view of the basis, cached (images are
        immutable)."""
        cached = getattr(self, "_stacked", None)
        if cached is None:
            cached = np.stack([b.data.astype(np.float32).reshape(-1)
                               for b in self.images])
            object.__setattr__(self, "_stacked", cached)
        return cached


def load_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Minimal ASCII OBJ reader: v and f records, fan-triangulated faces."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append([idx[0], a, b])
    if not verts or not faces:
        raise ValidationError(f"{path}: OBJ has no usable v/f records")
    return (np.asarray(verts, dtype=np.float64),
            np.asarray(faces, dtype=np.int32))


def load_object(obj_path: str, **pose) -> InsertedObject:
    """Load an OBJ plus its optional .json material sidecar."""
    verts, faces = load_obj(obj_path)
    sidecar = os.path.splitext(obj_path)[0] + ".json"
    albedo = np.array([0.7, 0.7, 0.7])
    emission = None
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            mat = json.load(fh)
        albedo = np.asarray(mat.get("albedo", albedo), dtype=np.float64)
        if "emission" in mat:
            emission = np.asarray(mat["emission"], dtype=np.float64)
    return InsertedObject(vertices=verts, faces=faces, albedo=albedo,
                          emission=emission, **pose)


# ---------------------------------------------------------------------------
# Scene compilation
# ---------------------------------------------------------------------------

class CompiledScene(NamedTuple):
    width: int
    height: int
    f: float
    cx: float
    cy: float
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    alb: np.ndarray
    emit_light: np.ndarray
    emit_rgb: np.ndarray
    is_obj: np.ndarray
    bvh: tuple
    light_kind: np.ndarray
    grp_start: np.ndarray
    grp_tri: np.ndarray
    grp_cum: np.ndarray
    grp_area: np.ndarray
    ibl_off: np.ndarray
    ibl_w: np.ndarray
    ibl_h: np.ndarray
    ibl_pix: np.ndarray
    ibl_cdf: np.ndarray
    ibl_pdf: np.ndarray
    ibl_rot: np.ndarray
    intensities: np.ndarray  # (L, 3) applied at combination time
    eps_o: float
    n_scene_lights: int


def _ibl_tables(pano: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Luminance-weighted CDF over pixels and per-pixel solid-angle pdf."""
    h, w = pano.shape[:2]
    rows = np.arange(h)
    sin_top = np.sin(0.5 * np.pi - np.pi * rows / h)
    sin_bot = np.sin(0.5 * np.pi - np.pi * (rows + 1) / h)
    domega = (2.0 * np.pi / w) * (sin_top - sin_bot)  # per-row pixel solid angle
    lum = luminance(pano)
    weight = lum * domega[:, None]
    total = weight.sum()
    if total <= 0:
        weight = np.ones_like(weight) * domega[:, None]
        total = weight.sum()
    p = (weight / total).ravel()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    pdf = (p.reshape(h, w) / np.maximum(domega[:, None], 1e-300)).ravel()
    return cdf, pdf


def compile_scene(
    scene: SceneModel,
    objects: tuple[InsertedObject, ...] = (),
    lights_override: tuple[LightSource, ...] | None = None,
    exclude_pixels: np.ndarray | None = None,
    resolution: tuple[int, int] | None = None,
) -> CompiledScene:
    """Flatten a scene model (plus inserted objects) into tracer arrays."""
    cam = scene.camera
    width, height = scene.width, scene.height
    f, (cx, cy) = cam.f, cam.c0
    if resolution is not None:
        rw, rh = resolution
        sx, sy = rw / width, rh / height
        if abs(sx - sy) > 0.01 * sx:
            raise ValidationError("resolution must preserve the scene aspect ratio")
        f = f * sx
        cx = (cx + 0.5) * sx - 0.5
        cy = (cy + 0.5) * sy - 0.5
        width, height = rw, rh

    mesh = triangulate(scene.depth, cam)
    tris = mesh.triangles
    if exclude_pixels is not None:
        ref = mesh.albedo_ref  # vertex -> (y, x)
        masked = exclude_pixels[ref[:, 0], ref[:, 1]]
        keep = ~(masked[tris[:, 0]] & masked[tris[:, 1]] & masked[tris[:, 2]])
        tris = tris[keep]
    v = mesh.vertices
    v0_list = [v[tris[:, 0]]]
    e1_list = [v[tris[:, 1]] - v[tris[:, 0]]]
    e2_list = [v[tris[:, 2]] - v[tris[:, 0]]]
    alb_img = scene.albedo.data.astype(np.float64)
    vert_alb = alb_img[mesh.albedo_ref[:, 0], mesh.albedo_ref[:, 1]]
    alb_list = [(vert_alb[tris[:, 0]] + vert_alb[tris[:, 1]]
                 + vert_alb[tris[:, 2]]) / 3.0]
    n_mesh = len(tris)
    emit_light_list = [np.full(n_mesh, -1, dtype=np.int32)]
    emit_rgb_list = [np.zeros((n_mesh, 3))]
    is_obj_list = [np.zeros(n_mesh, dtype=np.uint8)]

    lights = list(scene.lights if lights_override is None else lights_override)
    if len(lights) + len(objects) > tracer.MAX_LIGHTS:
        raise ValidationError(f"at most {tracer.MAX_LIGHTS} lights supported")

    light_kind: list[int] = []
    intensities: list[np.ndarray] = []
    ibl_off, ibl_w, ibl_h = [], [], []
    ibl_pix_parts, ibl_cdf_parts, ibl_pdf_parts = [], [], []
    ibl_rot: list[np.ndarray] = []
    ibl_cursor = 0
    tri_cursor = n_mesh

    def add_dummy_ibl() -> None:
        ibl_off.append(0)
        ibl_w.append(1)
        ibl_h.append(1)
        ibl_rot.append(np.eye(3))

    # inserted objects become geometry; emissive ones also become lights
    obj_emitter_groups: list[list[int]] = []
    for obj in objects:
        wv = obj.world_vertices()
        fcs = np.asarray(obj.faces, dtype=np.int64)
        v0_list.append(wv[fcs[:, 0]])
        e1_list.append(wv[fcs[:, 1]] - wv[fcs[:, 0]])
        e2_list.append(wv[fcs[:, 2]] - wv[fcs[:, 0]])
        alb_list.append(obj.face_albedo())
        m = len(fcs)
        emit = obj.face_emission()
        el = np.full(m, -1, dtype=np.int32)
        er = np.zeros((m, 3))
        group: list[int] = []
        if emit is not None:
            hot = np.flatnonzero(emit.max(axis=1) > 0)
            er[hot] = emit[hot]
            group = [tri_cursor + int(i) for i in hot]
        obj_emitter_groups.append(group)
        emit_light_list.append(el)
        emit_rgb_list.append(er)
        is_obj_list.append(np.ones(m, dtype=np.uint8))
        tri_cursor += m

    # scene lights
    quad_geo_v0, quad_geo_e1, quad_geo_e2 = [], [], []
    quad_specs: list[tuple[int, list[int]]] = []  # (light index, tri ids)
    for light in lights:
        k = len(light_kind)
        intensities.append(np.asarray(light.intensity, dtype=np.float64))
        if isinstance(light, QuadLight):
            light_kind.append(tracer.KIND_QUAD)
            vq = light.vertices
            quad_geo_v0.extend([vq[0], vq[0]])
            quad_geo_e1.extend([vq[1] - vq[0], vq[2] - vq[0]])
            quad_geo_e2.extend([vq[2] - vq[0], vq[3] - vq[0]])
            quad_specs.append((k, [tri_cursor, tri_cursor + 1]))
            tri_cursor += 2
            add_dummy_ibl()
        elif isinstance(light, IblLight):
            light_kind.append(tracer.KIND_IBL)
            pano = light.panorama.data.astype(np.float64)
            cdf, pdf = _ibl_tables(pano)
            ibl_off.append(ibl_cursor)
            ibl_h.append(pano.shape[0])
            ibl_w.append(pano.shape[1])
            ibl_pix_parts.append(pano.reshape(-1, 3))
            ibl_cdf_parts.append(cdf)
            ibl_pdf_parts.append(pdf)
            ibl_rot.append(np.asarray(light.rotation, dtype=np.float64))
            ibl_cursor += pano.shape[0] * pano.shape[1]
        else:
            raise ValidationError(f"unknown light source type {type(light)}")

    n_scene_lights = len(light_kind)

    # emissive inserted objects are appended as extra light sources
    for group in obj_emitter_groups:
        if group:
            light_kind.append(tracer.KIND_QUAD)
            intensities.append(np.ones(3))
            quad_specs.append((len(light_kind) - 1, group))
            add_dummy_ibl()

    if quad_geo_v0:
        nq = len(quad_geo_v0)
        v0_list.append(np.asarray(quad_geo_v0))
        e1_list.append(np.asarray(quad_geo_e1))
        e2_list.append(np.asarray(quad_geo_e2))
        alb_list.append(np.zeros((nq, 3)))
        el = np.full(nq, -1, dtype=np.int32)
        er = np.zeros((nq, 3))
        emit_light_list.append(el)
        emit_rgb_list.append(er)
        is_obj_list.append(np.zeros(nq, dtype=np.uint8))

    v0_all = np.ascontiguousarray(np.concatenate(v0_list), dtype=np.float64)
    e1_all = np.ascontiguousarray(np.concatenate(e1_list), dtype=np.float64)
    e2_all = np.ascontiguousarray(np.concatenate(e2_list), dtype=np.float64)
    alb_all = np.ascontiguousarray(np.concatenate(alb_list), dtype=np.float64)
    emit_light = np.concatenate(emit_light_list)
    emit_rgb = np.ascontiguousarray(np.concatenate(emit_rgb_list), dtype=np.float64)
    is_obj = np.concatenate(is_obj_list)

    # group tables now that all triangle ids are final
    grp_tris: list[int] = []
    grp_cum: list[float] = []
    grp_start = [0]
    grp_area: list[float] = []
    spec_by_light = {k: ids for k, ids in quad_specs}
    for k, kind in enumerate(light_kind):
        if kind == tracer.KIND_QUAD:
            ids = spec_by_light[k]
            for t in ids:
                if k < n_scene_lights:
                    emit_light[t] = k
                    emit_rgb[t] = 1.0
                else:
                    emit_light[t] = k
            areas = [0.5 * np.linalg.norm(np.cross(e1_all[t], e2_all[t]))
                     for t in ids]
            total = float(sum(areas))
            cum = np.cumsum(np.asarray(areas) / max(total, 1e-300))
            cum[-1] = 1.0
            grp_tris.extend(ids)
            grp_cum.extend(cum.tolist())
            grp_area.append(total)
        else:
            grp_area.append(0.0)
        grp_start.append(len(grp_tris))

    bvh = tracer.build_bvh(v0_all, e1_all, e2_all)

    lo = v0_all.min(axis=0) if len(v0_all) else np.zeros(3)
    hi = np.maximum(np.maximum(v0_all, v0_all + e1_all),
                    v0_all + e2_all).max(axis=0) if len(v0_all) else np.ones(3)
    diag = float(np.linalg.norm(hi - lo))
    eps_o = max(1e-9, 1e-6 * diag)

    n_lights = len(light_kind)
    empty_pix = np.zeros((1, 3))
    empty_flat = np.zeros(1)
    return CompiledScene(
        width=width, height=height, f=float(f), cx=float(cx), cy=float(cy),
        v0=v0_all, e1=e1_all, e2=e2_all, alb=alb_all,
        emit_light=emit_light, emit_rgb=emit_rgb, is_obj=is_obj, bvh=bvh,
        light_kind=np.asarray(light_kind, dtype=np.int32),
        grp_start=np.asarray(grp_start, dtype=np.int64),
        grp_tri=np.asarray(grp_tris, dtype=np.int32)
        if grp_tris else np.zeros(0, dtype=np.int32),
        grp_cum=np.asarray(grp_cum) if grp_cum else np.zeros(0),
        grp_area=np.asarray(grp_area),
        ibl_off=np.asarray(ibl_off, dtype=np.int64)
        if ibl_off else np.zeros(0, dtype=np.int64),
        ibl_w=np.asarray(ibl_w, dtype=np.int64)
        if ibl_w else np.zeros(0, dtype=np.int64),
        ibl_h=np.asarray(ibl_h, dtype=np.int64)
        if ibl_h else np.zeros(0, dtype=np.int64),
        ibl_pix=np.ascontiguousarray(np.concatenate(ibl_pix_parts))
        if ibl_pix_parts else empty_pix,
        ibl_cdf=np.concatenate(ibl_cdf_parts) if ibl_cdf_parts else empty_flat,
        ibl_pdf=np.concatenate(ibl_pdf_parts) if ibl_pdf_parts else empty_flat,
        ibl_rot=np.ascontiguousarray(np.stack(ibl_rot))
        if ibl_rot else np.zeros((0, 3, 3)),
        intensities=np.asarray(intensities).reshape(n_lights, 3)
        if n_lights else np.zeros((0, 3)),
        eps_o=eps_o,
        n_scene_lights=n_scene_lights,
    )


def _run_tracer(cs: CompiledScene, settings: RenderSettings,
                want_var: bool) -> tuple[np.ndarray, np.ndarray | None]:
    n_lights = len(cs.light_kind)
    shape = (max(n_lights, 1), cs.height, cs.width, 3)
    out_sum = np.zeros(shape)
    out_sq = np.zeros(shape if want_var else (1, 1, 1, 3))
    if n_lights:
        nmin, nmax, nleft, nright, nstart, ncount, order = cs.bvh
        tracer.render_kernel(
            cs.width, cs.height, cs.f, cs.cx, cs.cy,
            cs.v0, cs.e1, cs.e2, cs.alb, cs.emit_light, cs.emit_rgb,
            nmin, nmax, nleft, nright, nstart, ncount, order,
            cs.light_kind,
            cs.grp_start, cs.grp_tri, cs.grp_cum, cs.grp_area,
            cs.ibl_off, cs.ibl_w, cs.ibl_h, cs.ibl_pix, cs.ibl_cdf, cs.ibl_pdf,
            cs.ibl_rot,
            settings.spp, settings.max_bounces, settings.rr_start,
            np.uint64(settings.seed), cs.eps_o,
            out_sum, out_sq, want_var)
    mean = out_sum / settings.spp
    if not want_var:
        return mean[:n_lights], None
    var = np.maximum(out_sq / settings.spp - mean * mean, 0.0)
    return mean[:n_lights], var[:n_lights]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def basis_render(scene: SceneModel, objects: tuple[InsertedObject, ...] = (),
                 settings: RenderSettings = RenderSettings(),
                 lights_override: tuple[LightSource, ...] | None = None,
                 exclude_pixels: np.ndarray | None = None) -> BasisSet:
    """Per-light unit-intensity renders sharing one traced pass."""
    lights = scene.lights if lights_override is None else lights_override
    if len(lights) < 1:
        raise ValidationError("basis_render needs at least one light")
    cs = compile_scene(scene, objects, lights_override, exclude_pixels,
                       settings.resolution)
    mean, _ = _run_tracer(cs, settings, want_var=False)
    images = tuple(HdrImage(np.maximum(m, 0.0).astype(np.float32)) for m in mean)
    mask = object_mask(scene, objects, settings) if objects else None
    return BasisSet(images=images, mask=mask)


def render(scene: SceneModel, objects: tuple[InsertedObject, ...] = (),
           lights_override: tuple[LightSource, ...] | None = None,
           settings: RenderSettings = RenderSettings(),
           exclude_pixels: np.ndarray | None = None) -> HdrImage:
    """Render with each light at its stored RGB intensity."""
    cs = compile_scene(scene, objects, lights_override, exclude_pixels,
                       settings.resolution)
    if len(cs.light_kind) == 0:
        return HdrImage(np.zeros((cs.height, cs.width, 3), dtype=np.float32))
    mean, _ = _run_tracer(cs, settings, want_var=False)
    img = np.einsum("khwc,kc->hwc", mean, cs.intensities)
    return HdrImage(np.maximum(img, 0.0).astype(np.float32))


def object_mask(scene: SceneModel, objects: tuple[InsertedObject, ...],
                settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Anti-aliased per-pixel coverage fraction of the inserted objects."""
    if not objects:
        raise ValidationError("object_mask needs at least one object")
    cs = compile_scene(scene, objects, resolution=settings.resolution)
    out = np.zeros((cs.height, cs.width))
    nmin, nmax, nleft, nright, nstart, ncount, order = cs.bvh
    tracer.mask_kernel(cs.width, cs.height, cs.f, cs.cx, cs.cy,
                       cs.v0, cs.e1, cs.e2, cs.is_obj,
                       nmin, nmax, nleft, nright, nstart, ncount, order,
                       settings.spp, np.uint64(settings.seed), out)
    return out


def render_variance_probe(scene: SceneModel, light_k: int,
                          budget_spp: int = 16,
                          settings: RenderSettings = RenderSettings()) -> float:
    """Mean per-pixel sample variance of light k's render at its intensity.

    High scores mark sources that would render noisily (inefficiently).
    """
    if not 0 <= light_k < len(scene.lights):
        raise IndexError(f"light index {light_k} out of range")
    cs = compile_scene(scene, resolution=settings.resolution)
    probe_settings = RenderSettings(spp=budget_spp,
                                    max_bounces=settings.max_bounces,
                                    seed=settings.seed,
                                    resolution=settings.resolution,
                                    rr_start=settings.rr_start)
    mean, var = _run_tracer(cs, probe_settings, want_var=True)
    scale = cs.intensities[light_k] ** 2
    return float(np.mean(var[light_k] * scale))


class CompositeResult(NamedTuple):
    image: HdrImage
    clamped: int  # pixels floored at zero


def differential_composite(i_b: HdrImage | LdrImage, i_obj: HdrImage,
                           i_noobj: HdrImage, mask: np.ndarray) -> CompositeResult:
    """Additive differential compositing:
    final = M * obj + (1 - M) * (b + obj - noobj), floored at zero."""
    if isinstance(i_b, LdrImage):
        b = i_b.data.astype(np.float64) / 255.0
    else:
        b = i_b.data.astype(np.float64)
    o = i_obj.data.astype(np.float64)
    n = i_noobj.data.astype(np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[..., None]
    if not (b.shape == o.shape == n.shape and m.shape[:2] == b.shape[:2]):
        raise ValidationError(
            f"composite inputs disagree: {b.shape} {o.shape} {n.shape} {m.shape}")
    if m.min() < 0 or m.max() > 1:
        raise ValidationError("mask must lie in [0, 1]")
    out = m * o + (1.0 - m) * (b + o - n)
    clamped = int((out < 0).sum())
    return CompositeResult(HdrImage(np.maximum(out, 0.0).astype(np.float32)),
                           clamped)
