"""Generate golden test fixtures for the editor from the engine's own math.

The editor must agree with the server within 1/255 per channel after the
shared display transform; these fixtures freeze server-side outputs so the
TypeScript suite can verify that without a live service.

Run from the repository root:  python frontend/scripts/make_fixtures.py
"""

import base64
import io
import json
import os

import numpy as np

from sceneforge.geometry import DepthMap
from sceneforge.images import HdrImage, linear_to_srgb_u8
from sceneforge.pipeline import DofParams, depth_of_field
from sceneforge.relight import recombine
from sceneforge.render import BasisSet
from sceneforge.assets import write_pfm, write_pfm_gray

OUT = os.path.join(os.path.dirname(__file__), "..", "test", "fixtures")


def pfm_b64(img: HdrImage) -> str:
    import tempfile
    with tempfile.NamedTemporaryFile(suffix=".pfm") as fh:
        write_pfm(img, fh.name)
        return base64.b64encode(open(fh.name, "rb").read()).decode()


def pfm_gray_b64(arr: np.ndarray) -> str:
    import tempfile
    with tempfile.NamedTemporaryFile(suffix=".pfm") as fh:
        write_pfm_gray(arr.astype(np.float32), fh.name)
        return base64.b64encode(open(fh.name, "rb").read()).decode()


def smooth_basis(seed: int, h: int, w: int, peak: float) -> HdrImage:
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        img[..., c] = (
            0.5 + 0.5 * np.sin(xs / w * rng.uniform(2, 7) + rng.uniform(0, 6))
            * np.cos(ys / h * rng.uniform(1, 5) + rng.uniform(0, 6)))
    img *= peak * rng.uniform(0.5, 1.0, 3)
    img[h // 3:h // 2, w // 4:w // 2] *= 2.0  # a brighter patch
    return HdrImage(np.ascontiguousarray(img, dtype=np.float32))


def main() -> None:
    os.makedirs(OUT, exist_ok=True)

    # ---- PFM parsing fixture ----
    rng = np.random.default_rng(0)
    small = HdrImage(rng.uniform(0, 3, (4, 6, 3)).astype(np.float32))
    doc = {
        "pfm_b64": pfm_b64(small),
        "width": 6,
        "height": 4,
        "values": np.asarray(small.data, dtype=np.float64).ravel().tolist(),
        "gray_b64": pfm_gray_b64(rng.uniform(0.5, 5, (3, 6)).astype(np.float32)),
    }
    with open(os.path.join(OUT, "pfm.json"), "w") as fh:
        json.dump(doc, fh)

    # ---- recombination agreement fixture ----
    h, w = 36, 48
    bases = [smooth_basis(10 + k, h, w, peak) for k, peak in
             enumerate([0.9, 0.5, 1.6])]
    basis_set = BasisSet(images=tuple(bases))
    weight_sets = [[1.0, 1.0, 1.0], [0.35, 1.8, 0.0], [0.0, 0.0, 0.0],
                   [2.5, 0.2, 0.7]]
    gammas = [1 / 2.2, 1.0, 0.7]
    cases = []
    for ws in weight_sets:
        for g in gammas:
            out = recombine(basis_set, np.asarray(ws), g)
            cases.append({
                "weights": ws,
                "gamma": g,
                "expected_srgb": linear_to_srgb_u8(out.data).ravel().tolist(),
            })
    doc = {
        "width": w,
        "height": h,
        "bases_pfm_b64": [pfm_b64(b) for b in bases],
        "solved_weights": [1.0, 1.0, 1.0],
        "cases": cases,
    }
    with open(os.path.join(OUT, "recombine.json"), "w") as fh:
        json.dump(doc, fh)

    # ---- depth-of-field preview fixture ----
    img = smooth_basis(99, h, w, 0.8)
    depth = np.full((h, w), 2.0)
    depth[:, w // 2:] = 4.0
    focus, aperture = 2.0, 1.0
    exact = depth_of_field(img, DepthMap(depth),
                           DofParams(focal_depth=focus, aperture=aperture))
    doc = {
        "width": w,
        "height": h,
        "image_pfm_b64": pfm_b64(img),
        "depth_pfm_b64": pfm_gray_b64(depth),
        "focus": focus,
        "aperture": aperture,
        "expected_srgb": linear_to_srgb_u8(exact.data).ravel().tolist(),
    }
    with open(os.path.join(OUT, "dof.json"), "w") as fh:
        json.dump(doc, fh)
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
