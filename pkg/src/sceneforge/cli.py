"""Command-line interface: inference, relighting, compositing, depth of
field, classifier/ranker training, fixtures, and the HTTP service."""

from __future__ import annotations

import json
import os
import tempfile

import click
import numpy as np

from . import fixtures
from .assets import (load_panorama, load_scene, read_pfm, read_png, write_pfm,
                     write_png)
from .images import HdrImage, LdrImage, linear_to_srgb_u8
from .light_detect import features_all, slic, train_light_classifier
from .pipeline import (DofParams, InferConfig, composite_object,
                       depth_of_field, run_infer, train_rank_model)
from .relight import recombine
from .render import BasisSet


def _write_image(data_linear: np.ndarray, path: str) -> None:
    """PNG (sRGB-encoded) or PFM (raw linear), by extension."""
    if path.endswith(".pfm"):
        write_pfm(HdrImage(np.maximum(data_linear, 0).astype(np.float32)), path)
    else:
        write_png(LdrImage(linear_to_srgb_u8(data_linear)), path)


def _load_basis(scene_dir: str) -> BasisSet:
    images = []
    k = 0
    while os.path.exists(os.path.join(scene_dir, "basis", f"{k}.pfm")):
        images.append(read_pfm(os.path.join(scene_dir, "basis", f"{k}.pfm")))
        k += 1
    if not images:
        raise click.ClickException(f"no basis renders under {scene_dir}/basis")
    return BasisSet(images=tuple(images))


def _parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


@click.group()
def main() -> None:
    """Single-image scene inference and physically grounded editing."""


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--indoor", "scene_class", flag_value="indoor")
@click.option("--outdoor", "scene_class", flag_value="outdoor")
@click.option("--spp", default=64, show_default=True)
@click.option("--report/--no-report", default=True, show_default=True)
def infer(image: str, out_dir: str, seed: int, scene_class: str | None,
          spp: int, report: bool) -> None:
    """Estimate camera, depth, albedo, and lighting from one photograph."""
    img = read_png(image)
    config = InferConfig(seed=seed, scene_class=scene_class, spp=spp,
                         report=report)
    result = run_infer(img, out_dir, config)
    click.echo(f"scene written to {out_dir} "
               f"(class={result.scene_class.label}, "
               f"lights={len(result.scene.lights)}, "
               f"gamma={result.scene.response_gamma:.4f})")


@main.command()
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--weights", required=True,
              help="comma-separated per-light intensities")
@click.option("--gamma", default=None, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
def relight(scene_dir: str, weights: str, gamma: float | None,
            out_path: str) -> None:
    """Recombine the stored basis renders under new light intensities."""
    scene = load_scene(scene_dir)
    basis = _load_basis(scene_dir)
    w = np.asarray(_parse_floats(weights))
    if len(w) != len(basis):
        raise click.ClickException(
            f"scene has {len(basis)} lights, got {len(w)} weights")
    g = scene.response_gamma if gamma is None else gamma
    model = recombine(basis, w, g)
    _write_image(model.data, out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--object", "obj", required=True,
              help="OBJ path or catalog name (cube, sphere, pedestal)")
@click.option("--at", "at", required=True, help="pixel x,y")
@click.option("--scale", default=1.0, show_default=True)
@click.option("--rotation", default=0.0, show_default=True,
              help="yaw around the surface normal, degrees")
@click.option("--seed", default=0, show_default=True)
@click.option("--spp", default=64, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def composite(scene_dir: str, obj: str, at: str, scale: float, rotation: float,
              seed: int, spp: int, out_path: str) -> None:
    """Insert an object and composite it differentially over the photo."""
    x, y = (int(round(v)) for v in _parse_floats(at))
    if os.path.exists(obj):
        obj_path = obj
    elif obj in fixtures.OBJECT_CATALOG:
        catalog_dir = os.path.join(tempfile.gettempdir(), "sceneforge_objects")
        obj_path = fixtures.write_object_catalog(catalog_dir)[obj]
    else:
        raise click.ClickException(
            f"--object must be a path or one of {fixtures.OBJECT_CATALOG}")
    res = composite_object(scene_dir, obj_path, x, y, scale=scale,
                           rotation_deg=rotation, seed=seed, spp=spp)
    if out_path.endswith(".pfm"):
        _write_image(res.composite.data, out_path)
    else:
        write_png(LdrImage(res.composite_png), out_path)
    click.echo(f"wrote {out_path} (mask coverage "
               f"{float(res.mask.mean()):.4f})")


@main.command()
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--focus", required=True, type=float, help="focal depth d")
@click.option("--aperture", required=True, type=float, help="blur per unit depth")
@click.option("--weights", default=None)
@click.option("--gamma", default=None, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
def dof(scene_dir: str, focus: float, aperture: float, weights: str | None,
        gamma: float | None, out_path: str) -> None:
    """Apply post-process depth of field to the relit scene."""
    scene = load_scene(scene_dir)
    basis = _load_basis(scene_dir)
    w = np.asarray(_parse_floats(weights)) if weights else \
        np.array([ls.intensity[0] for ls in scene.lights])
    g = scene.response_gamma if gamma is None else gamma
    model = recombine(basis, w, g)
    out = depth_of_field(model, scene.depth,
                         DofParams(focal_depth=focus, aperture=aperture))
    _write_image(out.data, out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
def trainlights(manifest: str, out_path: str) -> None:
    """Train the emitter classifier from a manifest of images + masks."""
    with open(manifest) as fh:
        doc = json.load(fh)
    root = os.path.dirname(os.path.abspath(manifest))
    n_segments = int(doc.get("n_segments", 80))
    samples = []
    for entry in doc["images"]:
        img = read_png(os.path.join(root, entry["image"]))
        mask_img = read_png(os.path.join(root, entry["mask"]))
        mask = mask_img.data[..., 0] > 127
        seg = slic(img, n_segments=n_segments)
        feats = features_all(img, seg)
        for s in range(seg.n):
            samples.append((feats[s],
                            bool(mask[seg.labels == s].mean() >= 0.5)))
    clf = train_light_classifier(samples)
    clf.save(out_path)
    pos = sum(1 for _, lbl in samples if lbl)
    click.echo(f"trained on {len(samples)} superpixels ({pos} emitters); "
               f"wrote {out_path}")


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--lights", "clf_path", default=None,
              help="optional emitter classifier JSON for the lc feature")
def trainrank(manifest: str, out_path: str, clf_path: str | None) -> None:
    """Train the IBL ranking model from an annotated panorama dataset."""
    from .light_detect import LightClassifier

    with open(manifest) as fh:
        doc = json.load(fh)
    root = os.path.dirname(os.path.abspath(manifest))
    gallery = []
    for entry in doc["panoramas"]:
        pano = load_panorama(os.path.join(root, entry["image"]))
        gallery.append((entry["id"], pano))
    clf = LightClassifier.load(clf_path) if clf_path else None
    model = train_rank_model(gallery, clf, n_views=int(doc.get("n_views", 3)),
                             seed=int(doc.get("seed", 0)))
    model.save(out_path)
    click.echo(f"trained ranker on {len(gallery)} panoramas; wrote {out_path}")


@main.command()
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--port", default=8080, show_default=True)
@click.option("--work", "work_dir", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--spp", default=64, show_default=True)
def serve(scene_dir: str, port: int, work_dir: str | None, seed: int,
          spp: int) -> None:
    """Serve the scene over HTTP for the browser editor."""
    from .service import serve as _serve
    _serve(scene_dir, port, work_dir, seed, spp)


@main.command(name="fixtures")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def fixtures_cmd(out_dir: str, seed: int) -> None:
    """Materialize demo data: a rendered box photo, training datasets, and
    the insertable object catalog."""
    os.makedirs(out_dir, exist_ok=True)
    fx = fixtures.box_scene(seed=seed)
    write_png(fx.image, os.path.join(out_dir, "box.png"))
    fixtures.write_object_catalog(os.path.join(out_dir, "objects"))
    fixtures.write_light_training_manifest(os.path.join(out_dir, "lights_train"))
    fixtures.write_panorama_dataset(os.path.join(out_dir, "panos"))
    click.echo(f"fixtures written to {out_dir}")


if __name__ == "__main__":
    main()
