import io
import json
import threading
import time
import urllib.error
import urllib.request

import numpy as np
import pytest
from PIL import Image

from sceneforge import fixtures
from sceneforge.images import linear_to_srgb_u8
from sceneforge.pipeline import InferConfig, composite_object, run_infer
from sceneforge.relight import recombine
from sceneforge.service import make_server


@pytest.fixture(scope="module")
def served_scene(tmp_path_factory):
    scene_dir = str(tmp_path_factory.mktemp("svc") / "scene")
    fx = fixtures.box_scene(seed=0, spp=64)
    run_infer(fx.image, scene_dir, InferConfig(seed=0, spp=24, report=False))
    httpd = make_server(scene_dir, port=0, seed=0, spp=12)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield base, scene_dir, httpd.service
    httpd.shutdown()


def _get(url):
    with urllib.request.urlopen(url) as resp:
        return resp.read()


def _post(url, doc):
    req = urllib.request.Request(url, data=json.dumps(doc).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return resp.read()


def test_get_scene_schema(served_scene):
    base, scene_dir, _ = served_scene
    doc = json.loads(_get(base + "/scene"))
    assert set(doc) >= {"camera", "depth", "albedo", "gamma", "lights"}
    assert set(doc["camera"]) == {"f", "cx", "cy", "rotation"}
    assert len(doc["camera"]["rotation"]) == 9
    for light in doc["lights"]:
        assert light["type"] in ("quad", "ibl")
    assert doc == json.load(open(f"{scene_dir}/scene.json"))


def test_get_artifacts(served_scene):
    base, _, svc = served_scene
    assert _get(base + "/depth.pfm")[:2] == b"Pf"
    assert _get(base + "/basis/0.pfm")[:2] == b"PF"
    assert _get(base + "/input.png")[:4] == b"\x89PNG"


def test_relight_matches_recombine(served_scene):
    base, _, svc = served_scene
    w = [float(ls.intensity[0]) for ls in svc.scene.lights]
    png = _post(base + "/relight", {"w": w, "gamma": svc.scene.response_gamma})
    got = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
    model = recombine(svc.basis, np.asarray(w), svc.scene.response_gamma)
    expect = linear_to_srgb_u8(model.data)
    assert np.array_equal(got, expect)


def test_relight_rejects_bad_weights(served_scene):
    base, _, svc = served_scene
    with pytest.raises(urllib.error.HTTPError) as err:
        _post(base + "/relight", {"w": [1.0] * (len(svc.basis) + 2)})
    assert err.value.code == 400


def test_dof_endpoint(served_scene):
    base, _, _ = served_scene
    png = _post(base + "/dof", {"d": 2.5, "a": 0.8})
    assert png[:4] == b"\x89PNG"


def test_insert_job_flow_matches_cli_path(served_scene):
    base, scene_dir, svc = served_scene
    doc = json.loads(_post(base + "/insert",
                           {"obj_id": "cube", "x": 64, "y": 80,
                            "scale": 1.0, "rotation": 0.0}))
    job_id = doc["job_id"]
    deadline = time.time() + 120
    state = None
    while time.time() < deadline:
        state = json.loads(_get(base + f"/job/{job_id}"))
        if state["stage"] == "done" or state["error"]:
            break
        time.sleep(0.3)
    assert state is not None and state["error"] is None
    assert state["stage"] == "done"
    assert state["artifacts"]["result"] == f"/result/{job_id}.png"
    served = np.asarray(Image.open(io.BytesIO(
        _get(base + f"/result/{job_id}.png"))).convert("RGB"))
    res = composite_object(scene_dir, svc.objects["cube"], 64, 80,
                           seed=0, spp=12)
    assert np.array_equal(served, res.composite_png)


def test_insert_unknown_object(served_scene):
    base, _, _ = served_scene
    with pytest.raises(urllib.error.HTTPError) as err:
        _post(base + "/insert", {"obj_id": "teapot", "x": 1, "y": 1})
    assert err.value.code == 400


def test_unknown_routes_404(served_scene):
    base, _, _ = served_scene
    for path in ("/nope", "/job/unknown", "/result/unknown.png",
                 "/basis/zz.pfm"):
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(base + path)
        assert err.value.code == 404


def test_service_never_mutates_scene_dir(served_scene):
    import os
    base, scene_dir, _ = served_scene
    before = {}
    for root, _, files in os.walk(scene_dir):
        for f in files:
            p = os.path.join(root, f)
            before[p] = os.path.getmtime(p)
    _post(base + "/relight", {"w": [1.0] * len(json.loads(
        _get(base + "/scene"))["lights"])})
    _post(base + "/dof", {"d": 2.0, "a": 0.3})
    after = {}
    for root, _, files in os.walk(scene_dir):
        for f in files:
            p = os.path.join(root, f)
            after[p] = os.path.getmtime(p)
    assert before == after
