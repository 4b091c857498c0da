"""Inference diagnostics: matplotlib figures and a delimited stage summary
written into <scene_dir>/report/ next to the scene artifacts."""

from __future__ import annotations

import csv
import os

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .geometry import normals_from_depth, project  # noqa: E402
from .images import LdrImage, linear_to_srgb_u8  # noqa: E402


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def write_report(scene_dir: str, input_img: LdrImage, result) -> str:
    """Render diagnostic figures plus report.csv; returns the report dir."""
    out = os.path.join(scene_dir, "report")
    os.makedirs(out, exist_ok=True)
    scene = result.scene
    diag = result.diagnostics

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(scene.depth.depth, cmap="turbo")
    ax.set_title("solved depth")
    fig.colorbar(im, ax=ax, shrink=0.8, label="z-depth")
    _save(fig, os.path.join(out, "depth.png"))

    normals, _ = normals_from_depth(scene.depth, scene.camera)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow((normals * 0.5 + 0.5).clip(0, 1))
    ax.set_title("surface normals")
    _save(fig, os.path.join(out, "normals.png"))

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].imshow(linear_to_srgb_u8(scene.albedo.data))
    axes[0].set_title("albedo")
    shading = diag.get("shading")
    if shading is not None:
        s = shading.data / max(float(shading.data.max()), 1e-9)
        axes[1].imshow(linear_to_srgb_u8(s))
        axes[1].set_title("shading (normalized)")
    _save(fig, os.path.join(out, "intrinsic.png"))

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow(input_img.data)
    for det in diag.get("detections", ()):
        px = project(scene.camera, det.vertices)
        loop = np.vstack([px, px[:1]])
        ax.plot(loop[:, 0], loop[:, 1], "y-", lw=2)
    exclude = diag.get("exclude")
    if exclude is not None and exclude.any():
        ax.contour(exclude.astype(float), levels=[0.5], colors="red",
                   linewidths=0.8)
    ax.set_title("detected in-view lights")
    ax.set_xlim(0, input_img.width)
    ax.set_ylim(input_img.height, 0)
    _save(fig, os.path.join(out, "lights.png"))

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for axis, key, title in ((axes[0], "depth_trace", "depth objective"),
                             (axes[1], "relight_trace", "relight objective")):
        trace = diag.get(key)
        if trace:
            axis.semilogy(np.arange(len(trace)), np.asarray(trace))
        axis.set_title(title)
        axis.set_xlabel("iteration")
    _save(fig, os.path.join(out, "objective_traces.png"))

    n = len(result.basis)
    if n:
        cols = min(n, 4)
        rows = (n + cols - 1) // cols
        fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.4 * rows),
                                 squeeze=False)
        for i in range(rows * cols):
            ax = axes[i // cols][i % cols]
            ax.axis("off")
            if i < n:
                b = result.basis.images[i].data
                peak = max(float(b.max()), 1e-9)
                ax.imshow(linear_to_srgb_u8(b / peak))
                ax.set_title(f"basis {i}", fontsize=9)
        _save(fig, os.path.join(out, "basis.png"))

    csv_path = os.path.join(out, "report.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "seconds", "detail"])
        for stage, info in result.meta.get("stages", {}).items():
            detail = {k: v for k, v in info.items() if k != "seconds"}
            writer.writerow([stage, info.get("seconds", ""), repr(detail)])
        writer.writerow(["total", result.meta.get("total_seconds", ""), ""])
        writer.writerow(["rmse_init", result.meta.get("rmse_init", ""), ""])
        writer.writerow(["rmse_solved", result.meta.get("rmse_solved", ""), ""])
    return out
