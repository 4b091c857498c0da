"""Single-image scene inference and physically grounded editing."""

from .assets import (AnnotatedSource, IblLight, LightSource, Panorama,
                     QuadLight, SceneModel, load_scene, read_pfm, read_png,
                     save_scene, write_pfm, write_png)
from .geometry import (DepthMap, PinholeCamera, TriangleMesh, VanishingPoints,
                       camera_from_vps, detect_vanishing_points,
                       normals_from_depth, triangulate, unproject)
from .images import HdrImage, LdrImage, srgb_to_linear, tonemap
from .render import (BasisSet, InsertedObject, RenderSettings, basis_render,
                     differential_composite, object_mask, render,
                     render_variance_probe)

__version__ = "0.1.0"
