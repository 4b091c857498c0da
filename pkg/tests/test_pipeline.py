import json
import os

import numpy as np
import pytest

from sceneforge import fixtures
from sceneforge.assets import load_scene, read_png
from sceneforge.geometry import DepthMap, fallback_camera
from sceneforge.images import HdrImage
from sceneforge.pipeline import (DofParams, InferConfig, JobState, SceneClass,
                                 classify_scene, composite_object,
                                 depth_of_field, flatten_depth_disk,
                                 run_infer)


# ---------------------------------------------------------------------------
# Scene classification
# ---------------------------------------------------------------------------

def test_classify_unanimous_gallery():
    img = fixtures.outdoor_image(1)
    gallery = [(fixtures.outdoor_image(100 + i), "outdoor") for i in range(7)]
    got = classify_scene(img, gallery=gallery, k=7)
    assert got.label == "outdoor"
    assert got.votes == ("outdoor",) * 7


def test_classify_identical_image_is_first_neighbor():
    gallery = [(fixtures.indoor_image(i), "indoor") for i in range(4)]
    gallery += [(fixtures.outdoor_image(50 + i), "outdoor") for i in range(4)]
    query = gallery[5][0]
    got = classify_scene(query, gallery=gallery, k=7)
    assert got.votes[0] == "outdoor"


def test_classify_leave_one_out_accuracy():
    gallery = fixtures.classify_gallery(n_per_class=10, seed=300)
    correct = 0
    for i, (img, label) in enumerate(gallery):
        rest = [g for j, g in enumerate(gallery) if j != i]
        got = classify_scene(img, gallery=rest, k=7)
        correct += got.label == label
    assert correct / len(gallery) >= 0.9


def test_scene_class_majority_invariant():
    with pytest.raises(Exception):
        SceneClass(label="outdoor", votes=("indoor",) * 5 + ("outdoor",) * 2)


def test_job_state_ordering():
    js = JobState(job_id="j1")
    js.advance("camera")
    js.advance("solve")
    assert js.progress > 0
    with pytest.raises(ValueError):
        js.advance("classify")


# ---------------------------------------------------------------------------
# Depth of field
# ---------------------------------------------------------------------------

def _dof_fixture():
    h, w = 48, 64
    depth = np.full((h, w), 2.0)
    depth[:, 32:] = 4.0
    rng = np.random.default_rng(0)
    img = HdrImage(rng.uniform(0.2, 0.8, (h, w, 3)).astype(np.float32))
    return img, DepthMap(depth)


def test_dof_zero_aperture_identity():
    img, depth = _dof_fixture()
    out = depth_of_field(img, depth, DofParams(focal_depth=2.0, aperture=0.0))
    assert np.array_equal(out.data, img.data)


def test_dof_constant_depth_at_focus_identity():
    h, w = 32, 40
    img = HdrImage(np.random.default_rng(1).uniform(
        0, 1, (h, w, 3)).astype(np.float32))
    depth = DepthMap(np.full((h, w), 3.0))
    out = depth_of_field(img, depth, DofParams(focal_depth=3.0, aperture=5.0))
    assert np.array_equal(out.data, img.data)


def test_dof_impulse_sigma_matches_model():
    h, w = 64, 96
    aperture, d_focus = 1.1, 2.0
    depth = np.full((h, w), 2.0)
    depth[:, 48:] = 4.0  # far plane: sigma = 1.1 * 2 = 2.2
    img = np.zeros((h, w, 3), dtype=np.float32)
    img[32, 72] = 50.0  # impulse well inside the far plane
    out = depth_of_field(HdrImage(img), DepthMap(depth),
                         DofParams(focal_depth=d_focus, aperture=aperture))
    resp = out.data[:, :, 0]
    ys, xs = np.mgrid[0:h, 0:w]
    total = resp.sum()
    var = ((ys - 32) ** 2 * resp).sum() / total
    sigma_measured = np.sqrt(var)
    sigma_true = aperture * 2.0
    assert abs(sigma_measured - sigma_true) / sigma_true <= 0.10
    # near plane stays sharp
    assert np.array_equal(out.data[:, :40], img[:, :40])


def test_dof_preserves_interior_energy():
    h, w = 48, 64
    rng = np.random.default_rng(2)
    img = HdrImage(rng.uniform(0.3, 0.7, (h, w, 3)).astype(np.float32))
    depth = DepthMap(np.full((h, w), 5.0))
    out = depth_of_field(img, depth, DofParams(focal_depth=2.0, aperture=0.5))
    # normalized kernels keep the local mean: compare interior block sums
    a = img.data[12:36, 16:48].mean()
    b = out.data[12:36, 16:48].mean()
    assert abs(a - b) / a <= 0.01


def test_dof_params_validation():
    with pytest.raises(Exception):
        DofParams(focal_depth=0.0, aperture=1.0)
    with pytest.raises(Exception):
        DofParams(focal_depth=1.0, aperture=-0.1)


# ---------------------------------------------------------------------------
# Depth flattening for insertion
# ---------------------------------------------------------------------------

def test_flatten_depth_disk():
    cam = fallback_camera(64, 48)
    rng = np.random.default_rng(3)
    depth = DepthMap(3.0 * np.exp(0.05 * rng.standard_normal((48, 64))))
    flat = flatten_depth_disk(depth, cam, 32, 24, np.array([0.0, 0.0, -1.0]),
                              radius_frac=0.05)
    # inside the disk the depth is the tangent plane (constant z here)
    r = 0.05 * 64
    ys, xs = np.mgrid[0:48, 0:64]
    disk = (xs - 32) ** 2 + (ys - 24) ** 2 <= r * r
    assert np.abs(flat.depth[disk] - depth.depth[24, 32]).max() < 1e-9
    assert np.array_equal(flat.depth[~disk], depth.depth[~disk])


# ---------------------------------------------------------------------------
# End-to-end inference artifacts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def box_scene_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("scene") / "box_scene")
    fx = fixtures.box_scene(seed=0, spp=96)
    result = run_infer(fx.image, out, InferConfig(seed=0, spp=32, report=True))
    return out, fx, result


def test_infer_writes_scene_directory(box_scene_dir):
    out, fx, result = box_scene_dir
    for name in ("scene.json", "depth.pfm", "albedo.pfm", "input.png",
                 "meta.json"):
        assert os.path.exists(os.path.join(out, name))
    assert os.path.exists(os.path.join(out, "basis", "0.pfm"))
    scene = load_scene(out)
    assert len(scene.lights) == len(result.scene.lights)
    meta = json.load(open(os.path.join(out, "meta.json")))
    assert meta["rmse_solved"] < meta["rmse_init"]
    assert list(meta["stages"].keys()) and meta["scene_class"] == "indoor"


def test_infer_report_artifacts(box_scene_dir):
    out, _, _ = box_scene_dir
    report = os.path.join(out, "report")
    for name in ("depth.png", "normals.png", "intrinsic.png", "lights.png",
                 "objective_traces.png", "basis.png", "report.csv"):
        assert os.path.exists(os.path.join(report, name)), name
    header = open(os.path.join(report, "report.csv")).readline().strip()
    assert header == "stage,seconds,detail"


def test_infer_detects_true_emitter_region(box_scene_dir):
    out, fx, result = box_scene_dir
    from sceneforge.geometry import project
    dets = result.diagnostics["detections"]
    assert dets, "no in-view lights detected on the box fixture"
    scene = result.scene
    h, w = scene.height, scene.width
    ys, xs = np.mgrid[0:h, 0:w]
    px = np.stack([xs + 0.5, ys + 0.5], axis=-1)

    def raster_quad(quad):
        pts = project(scene.camera, quad)
        inside = np.zeros((h, w), dtype=bool)
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            crosses = (y0 <= px[..., 1]) != (y1 <= px[..., 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (px[..., 1] - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (px[..., 0] < xc)
        return inside

    truth = raster_quad(fx.true_quad)
    best_cover = 0.0
    for det in dets:
        got = raster_quad(det.vertices)
        best_cover = max(best_cover, (got & truth).sum() / truth.sum())
    assert best_cover >= 0.9


def test_pipeline_default_ibl_fallback(monkeypatch):
    # no detectable lights and an empty IBL gallery: one uniform white IBL
    import sceneforge.pipeline as pl
    from sceneforge.assets import IblLight

    monkeypatch.setattr(pl.fixtures, "panorama_gallery", lambda *a, **k: [])
    monkeypatch.setattr(pl, "detect_lights", lambda *a, **k: [])
    img = fixtures.indoor_image(11)
    result = pl.infer_scene(img, InferConfig(seed=0, scene_class="indoor",
                                             spp=8, report=False))
    assert len(result.scene.lights) == 1
    light = result.scene.lights[0]
    assert isinstance(light, IblLight)
    pano = light.panorama.data
    assert pano.min() == pano.max()  # uniform


def test_pipeline_stage_error_tagging(monkeypatch):
    import sceneforge.pipeline as pl

    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(pl, "decompose", boom)
    fx_img = fixtures.indoor_image(3)
    with pytest.raises(pl.PipelineError, match=r"\[albedo\]"):
        pl.infer_scene(fx_img, InferConfig(seed=0, scene_class="indoor",
                                           spp=4, report=False))


def test_composite_object_deterministic(box_scene_dir, tmp_path):
    out, _, _ = box_scene_dir
    obj_dir = str(tmp_path / "objects")
    paths = fixtures.write_object_catalog(obj_dir)
    r1 = composite_object(out, paths["cube"], 64, 80, seed=0, spp=16)
    r2 = composite_object(out, paths["cube"], 64, 80, seed=0, spp=16)
    assert np.array_equal(r1.composite_png, r2.composite_png)
    assert 0.0 < r1.mask.mean() < 0.5
    # background far from the object is untouched in linear space
    from sceneforge.images import srgb_to_linear
    i_b = srgb_to_linear(read_png(os.path.join(out, "input.png")))
    far = r1.mask == 0
    # exclude a dilation ring around the object (shadows legitimately differ)
    from scipy.ndimage import binary_dilation
    ring = binary_dilation(r1.mask > 0, iterations=12)
    far &= ~ring
    diff = np.abs(r1.composite.data - i_b.data)[far]
    assert np.percentile(diff, 95) < 0.05
