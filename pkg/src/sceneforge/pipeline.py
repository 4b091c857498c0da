"""End-to-end orchestration: indoor/outdoor classification, the full
single-image inference pipeline, object insertion, and synthetic depth of
field. The CLI and the HTTP service both drive these entry points, so their
outputs agree byte for byte for a given seed."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import fixtures
from .assets import (IblLight, LightSource, Panorama, QuadLight, SceneModel,
                     load_scene, read_png, save_scene, write_png)
from .depth_infer import (DepthObjectiveWeights, SolveOptions,
                          build_depth_prior, solve_depth)
from .features import gist_descriptor, resize_bilinear, to_gray
from .geometry import (DepthMap, DegenerateGeometry, InsufficientStructure,
                       PinholeCamera, camera_from_vps, detect_vanishing_points,
                       fallback_camera, normals_from_depth, pixel_rays,
                       unproject)
from .ibl_match import (GalleryEntry, RankModel, build_probe, compute_features,
                        ibl_distance, rank_ibls, sample_panorama, similarity,
                        train_ranker)
from .images import (HdrImage, LdrImage, ValidationError, linear_to_srgb_u8,
                     srgb_to_linear, tonemap)
from .intrinsic import decompose
from .light_detect import LightClassifier, detect_lights, slic
from .relight import (GAMMA_PRIOR, RelightProblem, RelightSolution, recombine,
                      solve)
from .render import (BasisSet, InsertedObject, RenderSettings, basis_render,
                     differential_composite, load_object, render)

STAGES = ("classify", "camera", "depth", "albedo", "lights", "ibl", "basis",
          "solve", "done")


class PipelineError(RuntimeError):
    """Stage-tagged failure; completed artifacts stay on disk."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class SceneClass:
    label: str
    votes: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.votes:
            counts = {v: self.votes.count(v) for v in set(self.votes)}
            top = max(counts.values())
            winners = sorted(k for k, c in counts.items() if c == top)
            majority = "indoor" if "indoor" in winners else winners[0]
            if self.label != majority:
                raise ValidationError("label must be the majority vote")


@dataclass(frozen=True)
class DofParams:
    focal_depth: float
    aperture: float

    def __post_init__(self) -> None:
        if not self.focal_depth > 0:
            raise ValidationError("focal depth must be positive")
        if self.aperture < 0:
            raise ValidationError("aperture must be nonnegative")


@dataclass
class JobState:
    job_id: str
    stage: str = STAGES[0]
    progress: float = 0.0
    artifacts: dict = field(default_factory=dict)
    error: str | None = None

    def advance(self, stage: str) -> None:
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ValueError(f"stage {stage} precedes {self.stage}")
        self.stage = stage
        self.progress = (STAGES.index(stage)) / (len(STAGES) - 1)

    def to_json(self) -> dict:
        return {"job_id": self.job_id, "stage": self.stage,
                "progress": self.progress, "artifacts": self.artifacts,
                "error": self.error}


# ---------------------------------------------------------------------------
# Indoor / outdoor classification
# ---------------------------------------------------------------------------

@lru_cache(maxsize=2)
def _gallery_descriptors(seed: int = 300) -> tuple[np.ndarray, tuple[str, ...]]:
    gallery = fixtures.classify_gallery(seed=seed)
    feats = np.stack([gist_descriptor(to_gray(img)) for img, _ in gallery])
    labels = tuple(lbl for _, lbl in gallery)
    return feats, labels


def classify_scene(img: LdrImage,
                   gallery: list[tuple[LdrImage, str]] | None = None,
                   k: int = 7) -> SceneClass:
    """k-nearest-neighbor vote over scene descriptors; ties go indoor."""
    if gallery is None:
        feats, labels = _gallery_descriptors()
    else:
        if not gallery:
            raise ValidationError("empty classification gallery")
        feats = np.stack([gist_descriptor(to_gray(g)) for g, _ in gallery])
        labels = tuple(lbl for _, lbl in gallery)
    if len(labels) < k:
        raise ValidationError(f"gallery smaller than k={k}")
    q = gist_descriptor(to_gray(img))
    d = np.linalg.norm(feats - q, axis=1)
    order = np.argsort(d, kind="stable")[:k]
    votes = tuple(labels[i] for i in order)
    n_in = votes.count("indoor")
    label = "indoor" if n_in >= k - n_in else "outdoor"
    return SceneClass(label=label, votes=votes)


# ---------------------------------------------------------------------------
# IBL ranking assets
# ---------------------------------------------------------------------------

@lru_cache(maxsize=2)
def default_rank_model(seed: int = 500) -> RankModel:
    gallery = fixtures.panorama_gallery(seed=seed)
    clf = fixtures.default_light_classifier()
    return train_rank_model(gallery, clf, n_views=3, seed=seed)


def train_rank_model(gallery: list[tuple[str, Panorama]],
                     clf: LightClassifier | None, n_views: int = 3,
                     seed: int = 0, c_slack: float = 100.0) -> RankModel:
    """Build probes and sampled views for every panorama, derive ranking
    triples from render distances, and train the 1-slack ranker."""
    probes = {pid: build_probe(p, pid) for pid, p in gallery}
    views = {pid: [compute_features(s.image, clf)
                   for s in sample_panorama(p, n_views, seed=seed,
                                            panorama_id=pid)]
             for pid, p in gallery}
    ids = [pid for pid, _ in gallery]
    dist = {(a, b): ibl_distance(probes[a], probes[b])
            for a in ids for b in ids if a < b}

    def d(a: str, b: str) -> float:
        if a == b:
            return 0.0
        return dist[(a, b)] if (a, b) in dist else dist[(b, a)]

    def mean_sim(view_feats, pid: str) -> np.ndarray:
        vecs = [similarity(view_feats, other).vector for other in views[pid]]
        return np.mean(vecs, axis=0)

    triples = []
    for i in ids:
        for vf in views[i]:
            others = [p for p in ids if p != i]
            for a_idx in range(len(others)):
                for b_idx in range(a_idx + 1, len(others)):
                    a, b = others[a_idx], others[b_idx]
                    da, db = d(i, a), d(i, b)
                    if abs(da - db) < 1e-9:
                        continue
                    better, worse = (a, b) if da < db else (b, a)
                    delta = abs(db - da)
                    triples.append((mean_sim(vf, better), mean_sim(vf, worse),
                                    delta))
    return train_ranker(triples, c_slack=c_slack)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InferConfig:
    seed: int = 0
    scene_class: str | None = None  # override; skips classification
    spp: int = 64
    max_width: int = 160
    n_segments: int | None = None
    report: bool = True
    data_seed: int = 100


@dataclass
class InferResult:
    scene: SceneModel
    basis: BasisSet
    solution: RelightSolution
    scene_class: SceneClass
    meta: dict
    diagnostics: dict  # intermediate arrays for the report


def _resize_ldr(img: LdrImage, width: int, height: int) -> LdrImage:
    data = resize_bilinear(img.data.astype(np.float64), width, height)
    return LdrImage(np.floor(data + 0.5).clip(0, 255).astype(np.uint8))


def _auto_segments(width: int, height: int) -> int:
    return int(np.clip(width * height // 48, 50, 400))


def infer_scene(img: LdrImage, config: InferConfig = InferConfig()
                ) -> InferResult:
    """Run the full pipeline: classify, camera, depth, albedo, in-view
    lights, out-of-view IBL ranking, basis renders, and intensity solve."""
    meta: dict = {"stages": {}, "seed": config.seed}
    diag: dict = {}
    t_start = time.time()

    def tick(stage: str, t0: float, **info) -> None:
        meta["stages"][stage] = {"seconds": round(time.time() - t0, 3), **info}

    # working resolution
    if img.width > config.max_width:
        scale = config.max_width / img.width
        work = _resize_ldr(img, config.max_width,
                           max(2, int(round(img.height * scale))))
    else:
        work = img
    w, h = work.width, work.height
    gray = to_gray(work)

    t0 = time.time()
    try:
        if config.scene_class is not None:
            scene_class = SceneClass(label=config.scene_class, votes=())
        else:
            scene_class = classify_scene(work)
    except Exception as exc:
        raise PipelineError("classify", str(exc)) from exc
    tick("classify", t0, label=scene_class.label)

    t0 = time.time()
    try:
        try:
            vps = detect_vanishing_points(work, seed=config.seed)
            camera = camera_from_vps(vps, w, h)
            cam_source = "vanishing_points"
        except (InsufficientStructure, DegenerateGeometry) as exc:
            camera = fallback_camera(w, h)
            cam_source = f"fallback ({exc})"
    except Exception as exc:
        raise PipelineError("camera", str(exc)) from exc
    tick("camera", t0, f=camera.f, source=cam_source)

    t0 = time.time()
    try:
        exemplars = fixtures.rgbd_exemplars()
        prior = build_depth_prior(work, exemplars)
        weights = DepthObjectiveWeights.for_class(scene_class.label)
        solve_res = solve_depth(prior, None, weights, camera,
                                SolveOptions(edge_image=gray))
        depth = solve_res.depth
    except Exception as exc:
        raise PipelineError("depth", str(exc)) from exc
    tick("depth", t0, iterations=solve_res.iterations,
         grad_inf=solve_res.grad_inf)
    diag["depth_trace"] = solve_res.trace
    diag["prior"] = prior

    t0 = time.time()
    try:
        linear = srgb_to_linear(work)
        dec = decompose(linear)
    except Exception as exc:
        raise PipelineError("albedo", str(exc)) from exc
    tick("albedo", t0)

    t0 = time.time()
    try:
        clf = fixtures.default_light_classifier(config.data_seed)
        n_seg = config.n_segments or _auto_segments(w, h)
        seg = slic(work, n_segments=n_seg)
        base_scene = SceneModel(camera=camera, depth=depth, albedo=dec.albedo,
                                lights=(), response_gamma=GAMMA_PRIOR)
        detections = detect_lights(work, base_scene, clf, seg=seg)
        exclude = np.zeros((h, w), dtype=bool)
        for det in detections:
            exclude |= np.isin(seg.labels, det.superpixel_ids)
    except Exception as exc:
        raise PipelineError("lights", str(exc)) from exc
    tick("lights", t0, n_detected=len(detections), n_segments=seg.n)
    diag["segmentation"] = seg
    diag["detections"] = detections

    t0 = time.time()
    try:
        gallery = fixtures.panorama_gallery()
        k = 1 if scene_class.label == "indoor" else 3
        chosen: list[str] = []
        pano_by_id = {}
        if gallery:
            model = default_rank_model()
            input_features = compute_features(work, clf)
            entries = []
            for pid, pano in gallery:
                samples = sample_panorama(pano, 3, seed=config.data_seed,
                                          panorama_id=pid)
                entries.append(GalleryEntry(
                    panorama_id=pid,
                    views=tuple(compute_features(s.image, clf)
                                for s in samples)))
                pano_by_id[pid] = pano
            chosen = rank_ibls(input_features, entries, model, k)
        lights: list[LightSource] = [d.as_light() for d in detections]
        for pid in chosen:
            pano = pano_by_id[pid]
            pano_hdr = pano.image if isinstance(pano.image, HdrImage) \
                else srgb_to_linear(pano.image)
            lights.append(IblLight(panorama=pano_hdr, rotation=np.eye(3),
                                   intensity=np.ones(3)))
        if not lights:
            uniform = HdrImage(np.full((8, 16, 3), 1.0, dtype=np.float32))
            lights.append(IblLight(panorama=uniform, rotation=np.eye(3),
                                   intensity=np.ones(3)))
    except Exception as exc:
        raise PipelineError("ibl", str(exc)) from exc
    tick("ibl", t0, chosen=chosen, k=k)

    t0 = time.time()
    try:
        scene = SceneModel(camera=camera, depth=depth, albedo=dec.albedo,
                           lights=tuple(lights), response_gamma=GAMMA_PRIOR)
        settings = RenderSettings(spp=config.spp, seed=config.seed)
        basis = basis_render(scene, settings=settings, exclude_pixels=exclude)
    except Exception as exc:
        raise PipelineError("basis", str(exc)) from exc
    tick("basis", t0, n_basis=len(basis))

    t0 = time.time()
    try:
        target = srgb_to_linear(work)
        problem = RelightProblem(target=target, basis=basis)
        solution = solve(problem)

        def rmse(model_img: HdrImage) -> float:
            return float(np.sqrt(np.mean(
                (model_img.data.astype(np.float64)
                 - target.data.astype(np.float64)) ** 2)))

        rmse_init = rmse(recombine(basis, np.ones(len(basis)), GAMMA_PRIOR))
        rmse_solved = rmse(solution.model)

        active_idx = [i for i in range(len(lights)) if solution.active[i]]
        if not active_idx:
            active_idx = [int(np.argmax(solution.w))]
        final_lights = []
        for i in active_idx:
            wi = float(solution.w[i])
            light = lights[i]
            if isinstance(light, QuadLight):
                final_lights.append(QuadLight(vertices=light.vertices,
                                              intensity=np.full(3, wi)))
            else:
                final_lights.append(IblLight(panorama=light.panorama,
                                             rotation=light.rotation,
                                             intensity=np.full(3, wi)))
        final_scene = SceneModel(camera=camera, depth=depth, albedo=dec.albedo,
                                 lights=tuple(final_lights),
                                 response_gamma=solution.gamma)
        final_basis = BasisSet(images=tuple(basis.images[i]
                                            for i in active_idx))
    except Exception as exc:
        raise PipelineError("solve", str(exc)) from exc
    tick("solve", t0, gamma=solution.gamma,
         w=[round(float(x), 6) for x in solution.w],
         active=[int(i) for i in active_idx],
         rmse_init=rmse_init, rmse_solved=rmse_solved)
    diag["relight_trace"] = solution.trace
    diag["exclude"] = exclude
    diag["shading"] = dec.shading

    meta["scene_class"] = scene_class.label
    meta["total_seconds"] = round(time.time() - t_start, 3)
    meta["rmse_init"] = rmse_init
    meta["rmse_solved"] = rmse_solved
    return InferResult(scene=final_scene, basis=final_basis, solution=solution,
                       scene_class=scene_class, meta=meta, diagnostics=diag)


def run_infer(img: LdrImage, out_dir: str,
              config: InferConfig = InferConfig()) -> InferResult:
    """infer_scene plus the scene-directory artifacts (and report figures)."""
    from .assets import write_pfm

    result = infer_scene(img, config)
    os.makedirs(out_dir, exist_ok=True)
    save_scene(result.scene, out_dir)
    if img.width > config.max_width:
        scale = config.max_width / img.width
        work = _resize_ldr(img, config.max_width,
                           max(2, int(round(img.height * scale))))
    else:
        work = img
    write_png(work, os.path.join(out_dir, "input.png"))
    basis_dir = os.path.join(out_dir, "basis")
    os.makedirs(basis_dir, exist_ok=True)
    for i, b in enumerate(result.basis.images):
        write_pfm(b, os.path.join(basis_dir, f"{i}.pfm"))
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(result.meta, fh, indent=1, sort_keys=True)
    if config.report:
        from .report import write_report
        write_report(out_dir, work, result)
    return result


# ---------------------------------------------------------------------------
# Depth of field
# ---------------------------------------------------------------------------

def depth_of_field(img: HdrImage, depth: DepthMap, params: DofParams,
                   sigma_floor: float = 0.3, max_radius: int = 60) -> HdrImage:
    """Spatially varying Gaussian gather: sigma_i = aperture * |D_i - d|,
    kernel radius ceil(3 sigma_i), kernels normalized over in-bounds taps.
    Pixels with sigma below the floor pass through unchanged."""
    if (img.width, img.height) != (depth.width, depth.height):
        raise ValidationError("image and depth dimensions differ")
    data = img.data.astype(np.float64)
    sigma = params.aperture * np.abs(depth.depth - params.focal_depth)
    sigma = np.where(sigma < sigma_floor, 0.0, sigma)
    radius = np.ceil(3.0 * sigma).astype(int)
    radius = np.minimum(radius, max_radius)
    r_max = int(radius.max())
    if r_max == 0:
        return HdrImage(img.data.copy())
    h, w = depth.depth.shape
    inv2s2 = np.where(sigma > 0, 1.0 / (2.0 * sigma * sigma + 1e-300), 0.0)
    acc = np.zeros_like(data)
    wacc = np.zeros((h, w))
    for dy in range(-r_max, r_max + 1):
        ys0 = max(0, -dy)
        ys1 = min(h, h - dy)
        if ys0 >= ys1:
            continue
        for dx in range(-r_max, r_max + 1):
            xs0 = max(0, -dx)
            xs1 = min(w, w - dx)
            if xs0 >= xs1:
                continue
            chebyshev = max(abs(dx), abs(dy))
            sub_r = radius[ys0:ys1, xs0:xs1]
            if chebyshev > 0:
                within = sub_r >= chebyshev
                if not within.any():
                    continue
            else:
                within = np.ones_like(sub_r, dtype=bool)
            d2 = dx * dx + dy * dy
            wgt = np.where(within,
                           np.where(sub_r > 0,
                                    np.exp(-d2 * inv2s2[ys0:ys1, xs0:xs1]),
                                    1.0 if chebyshev == 0 else 0.0),
                           0.0)
            acc[ys0:ys1, xs0:xs1] += wgt[..., None] \
                * data[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
            wacc[ys0:ys1, xs0:xs1] += wgt
    out = acc / wacc[..., None]
    return HdrImage(out.astype(np.float32))


# ---------------------------------------------------------------------------
# Object insertion
# ---------------------------------------------------------------------------

def _align_up_to_normal(normal: np.ndarray) -> np.ndarray:
    """Rotation taking the model up axis (0, -1, 0) to the surface normal."""
    up = np.array([0.0, -1.0, 0.0])
    n = normal / np.linalg.norm(normal)
    v = np.cross(up, n)
    c = float(up @ n)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # flipped; rotate around x
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / (s * s))


def _yaw_about(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * k @ k


def flatten_depth_disk(depth: DepthMap, cam: PinholeCamera, x: int, y: int,
                       normal: np.ndarray,
                       radius_frac: float = 0.05) -> DepthMap:
    """Flatten the depth map onto the local tangent plane inside a disk
    around the placement pixel, so the object sits on stable ground."""
    h, w = depth.depth.shape
    p3 = unproject(depth, cam, x, y)
    n = normal / np.linalg.norm(normal)
    plane_offset = float(p3 @ n)
    rays = pixel_rays(cam, w, h)
    denom = rays @ n
    ys, xs = np.mgrid[0:h, 0:w]
    r = radius_frac * w
    disk = (xs - x) ** 2 + (ys - y) ** 2 <= r * r
    new = depth.depth.copy()
    safe = np.where(np.abs(denom) < 1e-9, np.nan, denom)
    t = plane_offset / safe
    ok = disk & np.isfinite(t) & (t > 0)
    new[ok] = t[ok]
    return DepthMap(new)


@dataclass(frozen=True)
class InsertResult:
    composite: HdrImage
    composite_png: np.ndarray  # uint8 sRGB-encoded for display
    mask: np.ndarray
    basis_obj: BasisSet
    basis_noobj: BasisSet


def composite_object(scene_dir: str, obj_path: str, x: int, y: int,
                     scale: float = 1.0, rotation_deg: float = 0.0,
                     seed: int = 0, spp: int = 64) -> InsertResult:
    """Insert an OBJ into an inferred scene at pixel (x, y) and composite it
    differentially over the stored input photograph."""
    scene = load_scene(scene_dir)
    input_img = read_png(os.path.join(scene_dir, "input.png"))
    if (input_img.width, input_img.height) != (scene.width, scene.height):
        raise ValidationError("input.png does not match scene dimensions")
    if not (0 <= x < scene.width and 0 <= y < scene.height):
        raise IndexError(f"placement pixel ({x},{y}) outside scene")

    normals, _ = normals_from_depth(scene.depth, scene.camera)
    n = normals[y, x]
    p3 = unproject(scene.depth, scene.camera, x, y)
    size = 0.15 * float(scene.depth.depth[y, x]) * scale
    rot = _yaw_about(n, np.deg2rad(rotation_deg)) @ _align_up_to_normal(n)

    base = load_object(obj_path)
    # rest the model's lowest point (+y is down in model space) on the surface
    lowest = float(np.asarray(base.vertices)[:, 1].max())
    offset = rot @ np.array([0.0, -lowest * size, 0.0])
    obj = InsertedObject(vertices=base.vertices, faces=base.faces,
                         albedo=base.albedo, emission=base.emission,
                         rotation=rot, translation=p3 + offset, scale=size)

    flat = flatten_depth_disk(scene.depth, scene.camera, x, y, n)
    w_vec = np.array([ls.intensity[0] for ls in scene.lights])
    gamma = scene.response_gamma
    scene_flat = SceneModel(camera=scene.camera, depth=flat,
                            albedo=scene.albedo, lights=scene.lights,
                            response_gamma=gamma)
    settings = RenderSettings(spp=spp, seed=seed)
    basis_obj = basis_render(scene_flat, objects=(obj,), settings=settings)
    basis_noobj = basis_render(scene_flat, settings=settings)
    n_extra = len(basis_obj) - len(basis_noobj)
    w_obj = np.concatenate([w_vec, np.ones(n_extra)]) if n_extra else w_vec

    i_b = srgb_to_linear(input_img)
    i_obj = recombine(basis_obj, w_obj, gamma)
    i_noobj = recombine(basis_noobj, w_vec, gamma)
    comp, _ = differential_composite(i_b, i_obj, i_noobj, basis_obj.mask)
    png = linear_to_srgb_u8(comp.data)
    return InsertResult(composite=comp, composite_png=png,
                        mask=basis_obj.mask, basis_obj=basis_obj,
                        basis_noobj=basis_noobj)
