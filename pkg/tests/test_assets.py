import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sceneforge.assets import (AnnotatedSource, FormatError, IblLight,
                               Panorama, QuadLight, SceneModel, load_annotations,
                               load_scene, read_pfm, read_pfm_gray, read_png,
                               save_annotations, save_scene, write_pfm,
                               write_pfm_gray, write_png)
from sceneforge.geometry import DepthMap, PinholeCamera
from sceneforge.images import HdrImage, LdrImage, ValidationError


def _image(data):
    return HdrImage(np.asarray(data, dtype=np.float32))


def test_pfm_single_zero_pixel(tmp_path):
    path = str(tmp_path / "zero.pfm")
    write_pfm(_image(np.zeros((1, 1, 3))), path)
    img = read_pfm(path)
    assert img.width == 1 and img.height == 1
    assert (img.data == 0).all()
    payload = open(path, "rb").read().split(b"\n", 3)[3]
    assert payload == b"\x00" * 12


def test_pfm_roundtrip_bytes(tmp_path):
    path = str(tmp_path / "a.pfm")
    rng = np.random.default_rng(1)
    img = _image(rng.uniform(0, 10, (5, 7, 3)))
    write_pfm(img, path)
    blob1 = open(path, "rb").read()
    write_pfm(read_pfm(path), path)
    assert open(path, "rb").read() == blob1


def test_pfm_hexdump_oracle(tmp_path):
    # independent byte layout: header, then bottom row first, little-endian
    img = _image(np.arange(9, dtype=np.float32).reshape(3, 1, 3))
    path = str(tmp_path / "b.pfm")
    write_pfm(img, path)
    expected = b"PF\n1 3\n-1.0\n"
    for row in (2, 1, 0):  # bottom-up
        for c in range(3):
            expected += struct.pack("<f", float(img.data[row, 0, c]))
    assert open(path, "rb").read() == expected


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, (4, 6, 3),
              elements=st.floats(0, 1e6, width=32, allow_nan=False)))
def test_pfm_roundtrip_property(tmp_path_factory, data):
    path = str(tmp_path_factory.mktemp("pfm") / "p.pfm")
    img = HdrImage(data)
    write_pfm(img, path)
    assert np.array_equal(read_pfm(path).data, img.data)


def test_pfm_rejects_malformed(tmp_path):
    path = str(tmp_path / "bad.pfm")
    with open(path, "wb") as fh:
        fh.write(b"P6\n1 1\n-1.0\n" + b"\x00" * 12)
    with pytest.raises(FormatError):
        read_pfm(path)
    with open(path, "wb") as fh:
        fh.write(b"PF\n1 1\n1.0\n" + b"\x00" * 12)  # big-endian scale
    with pytest.raises(FormatError):
        read_pfm(path)
    with open(path, "wb") as fh:
        fh.write(b"PF\n2 2\n-1.0\n" + b"\x00" * 8)  # short payload
    with pytest.raises(FormatError):
        read_pfm(path)


def test_pfm_rejects_negative_radiance(tmp_path):
    path = str(tmp_path / "neg.pfm")
    with open(path, "wb") as fh:
        fh.write(b"PF\n1 1\n-1.0\n")
        fh.write(struct.pack("<fff", -1.0, 0.0, 0.0))
    with pytest.raises(ValidationError, match=r"\(0,0\)"):
        read_pfm(path)


def test_pfm_gray_roundtrip(tmp_path):
    path = str(tmp_path / "g.pfm")
    arr = np.random.default_rng(2).uniform(0.1, 5, (6, 4)).astype(np.float32)
    write_pfm_gray(arr, path)
    assert np.array_equal(read_pfm_gray(path), arr)
    with pytest.raises(FormatError):
        read_pfm(path)  # color reader refuses grayscale


def test_png_roundtrip(tmp_path):
    path = str(tmp_path / "i.png")
    img = LdrImage(np.random.default_rng(0).integers(0, 256, (5, 8, 3),
                                                     dtype=np.uint8))
    write_png(img, path)
    assert np.array_equal(read_png(path).data, img.data)


def _scene():
    cam = PinholeCamera(f=100.0, c0=(31.5, 23.5), rotation=np.eye(3))
    depth = DepthMap(np.full((48, 64), 2.5))
    albedo = _image(np.full((48, 64, 3), 0.5))
    quad = QuadLight(vertices=np.array([[0, -1, 2], [1, -1, 2],
                                        [1, -1, 3], [0, -1, 3.0]]),
                     intensity=np.array([2.0, 1.5, 1.0]))
    pano = _image(np.full((4, 8, 3), 0.25))
    ibl = IblLight(panorama=pano, rotation=np.eye(3),
                   intensity=np.ones(3))
    return SceneModel(camera=cam, depth=depth, albedo=albedo,
                      lights=(quad, ibl), response_gamma=1 / 2.2)


def test_scene_roundtrip(tmp_path):
    d = str(tmp_path / "scene")
    scene = _scene()
    save_scene(scene, d)
    loaded = load_scene(d)
    assert loaded.camera.f == scene.camera.f
    assert loaded.camera.c0 == scene.camera.c0
    assert np.array_equal(loaded.depth.depth, scene.depth.depth)
    assert np.array_equal(loaded.albedo.data, scene.albedo.data)
    assert loaded.response_gamma == scene.response_gamma
    assert len(loaded.lights) == 2
    assert np.array_equal(loaded.lights[0].vertices, scene.lights[0].vertices)
    assert np.array_equal(loaded.lights[1].panorama.data,
                          scene.lights[1].panorama.data)


def test_scene_zero_lights(tmp_path):
    d = str(tmp_path / "scene0")
    scene = SceneModel(camera=_scene().camera, depth=_scene().depth,
                       albedo=_scene().albedo, lights=(),
                       response_gamma=1.0)
    save_scene(scene, d)
    assert load_scene(d).lights == ()


def test_scene_unknown_light_tag(tmp_path):
    d = str(tmp_path / "scene1")
    save_scene(_scene(), d)
    doc = json.load(open(os.path.join(d, "scene.json")))
    doc["lights"][0]["type"] = "spot"
    json.dump(doc, open(os.path.join(d, "scene.json"), "w"))
    with pytest.raises(FormatError, match="spot"):
        load_scene(d)


def test_scene_dimension_mismatch(tmp_path):
    d = str(tmp_path / "scene2")
    save_scene(_scene(), d)
    write_pfm_gray(np.full((10, 10), 1.0, dtype=np.float32),
                   os.path.join(d, "depth.pfm"))
    with pytest.raises(ValidationError):
        load_scene(d)


CORRUPTIONS = [
    (("camera", "f"), -5.0),
    (("camera", "f"), "wide"),
    (("camera", "cx"), "left"),
    (("camera", "rotation"), [1.0] * 9),          # not orthonormal
    (("camera", "rotation"), [0.0] * 9),
    (("gamma",), 0.0),
    (("gamma",), -2.0),
    (("gamma",), "dark"),
    (("depth",), "missing.pfm"),
    (("albedo",), "missing.pfm"),
    (("lights", 0, "type"), "blob"),
    (("lights", 0, "vertices"), [[0, 0, 0]] * 4),  # degenerate quad
    (("lights", 0, "intensity"), [-1.0, 0, 0]),
    (("lights", 0, "intensity"), "bright"),
    (("lights", 1, "rotation"), [2.0] * 9),
    (("lights", 1, "intensity"), [0, 0, -3.0]),
    (("lights", 1, "panorama"), "gone.pfm"),
]


@pytest.mark.parametrize("path,value", CORRUPTIONS)
def test_scene_rejects_corruption(tmp_path, path, value):
    d = str(tmp_path / "scene")
    save_scene(_scene(), d)
    doc = json.load(open(os.path.join(d, "scene.json")))
    node = doc
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    json.dump(doc, open(os.path.join(d, "scene.json"), "w"))
    with pytest.raises((ValidationError, FormatError, OSError)):
        load_scene(d)


def test_annotations_roundtrip(tmp_path):
    path = str(tmp_path / "a.json")
    src = AnnotatedSource(polygon=np.array([[0, 0], [4.0, 0], [4, 3]]),
                          distance_class="medium")
    save_annotations([src], path)
    loaded = load_annotations(path)
    assert len(loaded) == 1
    assert np.array_equal(loaded[0].polygon, src.polygon)
    assert loaded[0].distance_class == "medium"


def test_annotation_validation():
    with pytest.raises(ValidationError):
        AnnotatedSource(polygon=np.array([[0, 0], [1, 1.0]]),
                        distance_class="close")
    with pytest.raises(ValidationError):
        AnnotatedSource(polygon=np.array([[0, 0], [1, 0], [1, 1.0]]),
                        distance_class="nearby")


def test_panorama_must_be_full_sphere():
    with pytest.raises(ValidationError):
        Panorama(_image(np.zeros((8, 8, 3))))
